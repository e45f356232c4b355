#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "mgcn/core.hpp"
#include "mgcn/rng.hpp"
#include "mgcn/tensor.hpp"

namespace mgcn {

// 2D convolution (cross-correlation) over channel-first [C, H, W] tensors
// with zero padding and a uniform stride.
struct Conv2DLayer {
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 0;
  Index stride = 1;
  Index padding = 0;
  Tensor weights;  // [out, in, k, k]
  Tensor bias;     // [out]

  Conv2DLayer() = default;
  Conv2DLayer(Index in, Index out, Index k, Index stride_, Index padding_)
      : in_channels(in), out_channels(out), kernel(k), stride(stride_), padding(padding_),
        weights({out, in, k, k}), bias({out}) {
    if (in < 1 || out < 1) throw ConfigMismatch("conv2d channels must be >= 1");
    if (k < 1) throw ConfigMismatch("conv2d kernel must be >= 1");
    if (stride_ < 1) throw ConfigMismatch("conv2d stride must be >= 1");
    if (padding_ < 0) throw ConfigMismatch("conv2d padding must be >= 0");
  }

  void init(Rng& rng) {
    const Real fan_in = static_cast<Real>(in_channels * kernel * kernel);
    const Real fan_out = static_cast<Real>(out_channels * kernel * kernel);
    const Real bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (Real& w : weights.data) w = rng.uniform(-bound, bound);
    bias.fill(0.0);
  }
};

inline Index conv2d_output_extent(Index input, Index kernel, Index stride, Index padding) {
  const Index span = input + 2 * padding - kernel;
  if (span < 0)
    throw ShapeMismatch("conv2d kernel does not fit: input " + std::to_string(input) +
                        ", kernel " + std::to_string(kernel) + ", padding " +
                        std::to_string(padding));
  return span / stride + 1;
}

namespace detail {

inline void check_conv2d_input(const Conv2DLayer& layer, const Tensor& x) {
  if (x.rank() != 3)
    throw ShapeMismatch("conv2d expects a [channels, height, width] tensor, got " +
                        Tensor::shape_string(x.shape));
  if (x.dim(0) != layer.in_channels)
    throw ShapeMismatch("conv2d input has " + std::to_string(x.dim(0)) + " channels, layer wants " +
                        std::to_string(layer.in_channels));
}

// Range of output positions i for which i*stride + u - padding lands inside
// [0, input): i in [lo, hi).
inline void conv2d_valid_range(Index out_extent, Index input, Index stride, Index offset,
                               Index& lo, Index& hi) {
  // Smallest i with i*stride + offset >= 0.
  lo = (offset >= 0) ? 0 : (-offset + stride - 1) / stride;
  // Largest i with i*stride + offset < input, plus one.
  hi = (input - offset + stride - 1) / stride;
  lo = std::min(std::max<Index>(lo, 0), out_extent);
  hi = std::min(std::max<Index>(hi, lo), out_extent);
}

}  // namespace detail

inline Tensor conv2d_forward(const Conv2DLayer& layer, const Tensor& x) {
  detail::check_conv2d_input(layer, x);
  const Index height = x.dim(1);
  const Index width = x.dim(2);
  const Index out_h = conv2d_output_extent(height, layer.kernel, layer.stride, layer.padding);
  const Index out_w = conv2d_output_extent(width, layer.kernel, layer.stride, layer.padding);

  Tensor y({layer.out_channels, out_h, out_w});
  for (Index o = 0; o < layer.out_channels; ++o) {
    Real* plane = y.data.data() + static_cast<std::size_t>(o * out_h * out_w);
    std::fill(plane, plane + static_cast<std::size_t>(out_h * out_w),
              layer.bias.data[static_cast<std::size_t>(o)]);
    for (Index c = 0; c < layer.in_channels; ++c) {
      const Real* xplane = x.data.data() + static_cast<std::size_t>(c * height * width);
      for (Index u = 0; u < layer.kernel; ++u) {
        Index ilo, ihi;
        detail::conv2d_valid_range(out_h, height, layer.stride, u - layer.padding, ilo, ihi);
        for (Index v = 0; v < layer.kernel; ++v) {
          const Real w = layer.weights.at4(o, c, u, v);
          Index jlo, jhi;
          detail::conv2d_valid_range(out_w, width, layer.stride, v - layer.padding, jlo, jhi);
          for (Index i = ilo; i < ihi; ++i) {
            const Real* xrow =
                xplane + static_cast<std::size_t>((i * layer.stride + u - layer.padding) * width);
            Real* yrow = plane + static_cast<std::size_t>(i * out_w);
            for (Index j = jlo; j < jhi; ++j)
              yrow[j] += w * xrow[j * layer.stride + v - layer.padding];
          }
        }
      }
    }
  }
  return y;
}

struct Conv2DGrads {
  Tensor weights;
  Tensor bias;
  Tensor x;
};

// Gradients of a scalar loss with upstream dL/dy; x must be the forward input.
inline Conv2DGrads conv2d_backward(const Conv2DLayer& layer, const Tensor& x,
                                   const Tensor& upstream) {
  detail::check_conv2d_input(layer, x);
  const Index height = x.dim(1);
  const Index width = x.dim(2);
  const Index out_h = conv2d_output_extent(height, layer.kernel, layer.stride, layer.padding);
  const Index out_w = conv2d_output_extent(width, layer.kernel, layer.stride, layer.padding);
  if (upstream.shape != std::vector<Index>{layer.out_channels, out_h, out_w})
    throw ShapeMismatch("conv2d_backward upstream shape " + Tensor::shape_string(upstream.shape) +
                        " does not match output " +
                        Tensor::shape_string({layer.out_channels, out_h, out_w}));

  Conv2DGrads grads;
  grads.weights = Tensor(layer.weights.shape);
  grads.bias = Tensor(layer.bias.shape);
  grads.x = Tensor(x.shape);

  for (Index o = 0; o < layer.out_channels; ++o) {
    const Real* gplane = upstream.data.data() + static_cast<std::size_t>(o * out_h * out_w);
    Real bias_acc = 0;
    for (Index t = 0; t < out_h * out_w; ++t) bias_acc += gplane[t];
    grads.bias.data[static_cast<std::size_t>(o)] = bias_acc;

    for (Index c = 0; c < layer.in_channels; ++c) {
      const Real* xplane = x.data.data() + static_cast<std::size_t>(c * height * width);
      Real* dxplane = grads.x.data.data() + static_cast<std::size_t>(c * height * width);
      for (Index u = 0; u < layer.kernel; ++u) {
        Index ilo, ihi;
        detail::conv2d_valid_range(out_h, height, layer.stride, u - layer.padding, ilo, ihi);
        for (Index v = 0; v < layer.kernel; ++v) {
          const Real w = layer.weights.at4(o, c, u, v);
          Index jlo, jhi;
          detail::conv2d_valid_range(out_w, width, layer.stride, v - layer.padding, jlo, jhi);
          Real weight_acc = 0;
          for (Index i = ilo; i < ihi; ++i) {
            const Index row = i * layer.stride + u - layer.padding;
            const Real* xrow = xplane + static_cast<std::size_t>(row * width);
            Real* dxrow = dxplane + static_cast<std::size_t>(row * width);
            const Real* grow = gplane + static_cast<std::size_t>(i * out_w);
            for (Index j = jlo; j < jhi; ++j) {
              const Index col = j * layer.stride + v - layer.padding;
              weight_acc += grow[j] * xrow[col];
              dxrow[col] += w * grow[j];
            }
          }
          grads.weights.at4(o, c, u, v) = weight_acc;
        }
      }
    }
  }
  return grads;
}

}  // namespace mgcn
