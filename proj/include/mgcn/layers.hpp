#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mgcn/core.hpp"
#include "mgcn/laplacian.hpp"
#include "mgcn/rng.hpp"
#include "mgcn/sparse.hpp"
#include "mgcn/tensor.hpp"

namespace mgcn {
namespace detail {

// C[m x n] += A[m x k] * B[k x n], row-major. AXPY inner loop keeps the
// accumulation order fixed and lets the compiler vectorize without
// reassociating reductions.
inline void gemm_nn_accum(const Real* a, const Real* b, Real* c, Index m, Index k, Index n) {
  for (Index r = 0; r < m; ++r) {
    const Real* arow = a + r * k;
    Real* crow = c + r * n;
    for (Index t = 0; t < k; ++t) {
      const Real av = arow[t];
      if (av == 0.0) continue;
      const Real* brow = b + t * n;
      for (Index cc = 0; cc < n; ++cc) crow[cc] += av * brow[cc];
    }
  }
}

// C[m x n] += A^T * B with A[k x m], B[k x n], row-major.
inline void gemm_tn_accum(const Real* a, const Real* b, Real* c, Index m, Index k, Index n) {
  for (Index t = 0; t < k; ++t) {
    const Real* arow = a + t * m;
    const Real* brow = b + t * n;
    for (Index r = 0; r < m; ++r) {
      const Real av = arow[r];
      if (av == 0.0) continue;
      Real* crow = c + r * n;
      for (Index cc = 0; cc < n; ++cc) crow[cc] += av * brow[cc];
    }
  }
}

inline std::vector<Real> transpose_matrix(const Real* a, Index rows, Index cols) {
  std::vector<Real> out(static_cast<std::size_t>(rows * cols));
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) out[static_cast<std::size_t>(c * rows + r)] = a[r * cols + c];
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Chebyshev spectral graph convolution
// ---------------------------------------------------------------------------

// y[:,j] = sum_k sum_i w[k][i][j] * T_k(L~) x[:,i] + b[j], with the Chebyshev
// recurrence T_0 = I, T_1 = L~, T_k = 2 L~ T_{k-1} - T_{k-2} applied to the
// feature columns; dense T_k matrices are never formed.
struct ChebConvLayer {
  Index order = 0;  // K; the filter uses K+1 basis terms
  Index in_channels = 0;
  Index out_channels = 0;
  Tensor weights;  // [K+1, in, out]
  Tensor bias;     // [out]
  const ScaledLaplacian* scaled_laplacian = nullptr;

  ChebConvLayer() = default;
  ChebConvLayer(Index k, Index in, Index out, const ScaledLaplacian* lap)
      : order(k), in_channels(in), out_channels(out),
        weights({k + 1, in, out}), bias({out}), scaled_laplacian(lap) {
    if (k < 0) throw ConfigMismatch("Chebyshev order must be >= 0");
  }

  void init(Rng& rng) {
    Real bound = std::sqrt(6.0 / (static_cast<Real>((order + 1) * in_channels) +
                                  static_cast<Real>(out_channels)));
    for (Real& w : weights.data) w = rng.uniform(-bound, bound);
    bias.fill(0.0);
  }
};

// Cached Chebyshev basis of the last forward pass: basis[k] = T_k(L~) x.
struct ChebContext {
  std::vector<Tensor> basis;
};

struct ChebConvGrads {
  Tensor weights;  // [K+1, in, out]
  Tensor bias;     // [out]
  Tensor x;        // [N, in]
};

inline Tensor cheb_conv_forward(const ChebConvLayer& layer, const Tensor& x,
                                ChebContext* context = nullptr) {
  if (layer.scaled_laplacian == nullptr) throw ConfigMismatch("ChebConv has no Laplacian");
  const SparseRealMatrix& lap = layer.scaled_laplacian->scaled;
  if (x.rank() != 2 || x.dim(0) != lap.rows || x.dim(1) != layer.in_channels)
    throw ShapeMismatch("ChebConv input must be [N, in_channels] on the layer's mesh");
  const Index n = x.dim(0), fin = layer.in_channels, fout = layer.out_channels;

  std::vector<Tensor> basis;
  basis.reserve(static_cast<std::size_t>(layer.order) + 1);
  basis.push_back(x);
  if (layer.order >= 1) {
    Tensor t1({n, fin});
    lap.multiply_dense(basis[0].data.data(), fin, t1.data.data());
    basis.push_back(std::move(t1));
  }
  for (Index k = 2; k <= layer.order; ++k) {
    Tensor tk({n, fin});
    lap.multiply_dense(basis[static_cast<std::size_t>(k - 1)].data.data(), fin, tk.data.data());
    for (std::size_t i = 0; i < tk.data.size(); ++i)
      tk.data[i] = 2.0 * tk.data[i] - basis[static_cast<std::size_t>(k - 2)].data[i];
    basis.push_back(std::move(tk));
  }

  Tensor y({n, fout});
  for (Index r = 0; r < n; ++r)
    for (Index j = 0; j < fout; ++j) y.at2(r, j) = layer.bias.data[static_cast<std::size_t>(j)];
  const std::size_t wslice = static_cast<std::size_t>(fin * fout);
  for (Index k = 0; k <= layer.order; ++k)
    detail::gemm_nn_accum(basis[static_cast<std::size_t>(k)].data.data(),
                          layer.weights.data.data() + static_cast<std::size_t>(k) * wslice,
                          y.data.data(), n, fin, fout);
  if (context) context->basis = std::move(basis);
  return y;
}

inline ChebConvGrads cheb_conv_backward(const ChebConvLayer& layer, const ChebContext& context,
                                        const Tensor& upstream) {
  const SparseRealMatrix& lap = layer.scaled_laplacian->scaled;
  const Index n = lap.rows, fin = layer.in_channels, fout = layer.out_channels;
  if (upstream.rank() != 2 || upstream.dim(0) != n || upstream.dim(1) != fout)
    throw ShapeMismatch("ChebConv upstream must be [N, out_channels]");
  if (context.basis.size() != static_cast<std::size_t>(layer.order) + 1)
    throw ShapeMismatch("ChebConv context does not match layer order");

  ChebConvGrads g;
  g.weights = Tensor({layer.order + 1, fin, fout});
  g.bias = Tensor({fout});
  g.x = Tensor({n, fin});

  for (Index r = 0; r < n; ++r)
    for (Index j = 0; j < fout; ++j) g.bias.data[static_cast<std::size_t>(j)] += upstream.at2(r, j);

  const std::size_t wslice = static_cast<std::size_t>(fin * fout);
  for (Index k = 0; k <= layer.order; ++k)
    detail::gemm_tn_accum(context.basis[static_cast<std::size_t>(k)].data.data(),
                          upstream.data.data(),
                          g.weights.data.data() + static_cast<std::size_t>(k) * wslice, fin, n, fout);

  // d/dx: T_k(L~) is symmetric, so the recurrence can run on the upstream
  // signal instead of on x.
  Tensor prev2, prev1;
  for (Index k = 0; k <= layer.order; ++k) {
    Tensor uk;
    if (k == 0) {
      uk = upstream;
    } else if (k == 1) {
      uk = Tensor({n, fout});
      lap.multiply_dense(upstream.data.data(), fout, uk.data.data());
    } else {
      uk = Tensor({n, fout});
      lap.multiply_dense(prev1.data.data(), fout, uk.data.data());
      for (std::size_t i = 0; i < uk.data.size(); ++i) uk.data[i] = 2.0 * uk.data[i] - prev2.data[i];
    }
    std::vector<Real> wt = detail::transpose_matrix(
        layer.weights.data.data() + static_cast<std::size_t>(k) * wslice, fin, fout);
    detail::gemm_nn_accum(uk.data.data(), wt.data(), g.x.data.data(), n, fout, fin);
    prev2 = std::move(prev1);
    prev1 = std::move(uk);
  }
  return g;
}

// Convenience overload that rebuilds the basis when no context was kept.
inline ChebConvGrads cheb_conv_backward(const ChebConvLayer& layer, const Tensor& x,
                                        const Tensor& upstream) {
  ChebContext ctx;
  cheb_conv_forward(layer, x, &ctx);
  return cheb_conv_backward(layer, ctx, upstream);
}

// ---------------------------------------------------------------------------
// Dense (fully connected) layer
// ---------------------------------------------------------------------------

struct DenseLayer {
  Index in_features = 0;
  Index out_features = 0;
  Tensor weights;  // [in, out]
  Tensor bias;     // [out]

  DenseLayer() = default;
  DenseLayer(Index in, Index out)
      : in_features(in), out_features(out), weights({in, out}), bias({out}) {}

  void init(Rng& rng) {
    Real bound = std::sqrt(6.0 / static_cast<Real>(in_features + out_features));
    for (Real& w : weights.data) w = rng.uniform(-bound, bound);
    bias.fill(0.0);
  }
};

struct DenseGrads {
  Tensor weights;
  Tensor bias;
  Tensor x;
};

// x may be [in] or [B, in]; output mirrors the input rank.
inline Tensor dense_forward(const DenseLayer& layer, const Tensor& x) {
  const bool vec = (x.rank() == 1);
  const Index batch = vec ? 1 : x.dim(0);
  const Index in = vec ? x.dim(0) : x.dim(1);
  if (in != layer.in_features) throw ShapeMismatch("dense input feature mismatch");
  Tensor y(vec ? std::vector<Index>{layer.out_features}
              : std::vector<Index>{batch, layer.out_features});
  for (Index r = 0; r < batch; ++r)
    for (Index j = 0; j < layer.out_features; ++j)
      y.data[static_cast<std::size_t>(r * layer.out_features + j)] =
          layer.bias.data[static_cast<std::size_t>(j)];
  detail::gemm_nn_accum(x.data.data(), layer.weights.data.data(), y.data.data(), batch, in,
                        layer.out_features);
  return y;
}

inline DenseGrads dense_backward(const DenseLayer& layer, const Tensor& x, const Tensor& upstream) {
  const bool vec = (x.rank() == 1);
  const Index batch = vec ? 1 : x.dim(0);
  const Index in = vec ? x.dim(0) : x.dim(1);
  const Index out = layer.out_features;
  if (in != layer.in_features) throw ShapeMismatch("dense input feature mismatch");
  if (upstream.size() != static_cast<std::size_t>(batch * out))
    throw ShapeMismatch("dense upstream shape mismatch");

  DenseGrads g;
  g.weights = Tensor({layer.in_features, out});
  g.bias = Tensor({out});
  g.x = Tensor(x.shape);
  for (Index r = 0; r < batch; ++r)
    for (Index j = 0; j < out; ++j)
      g.bias.data[static_cast<std::size_t>(j)] += upstream.data[static_cast<std::size_t>(r * out + j)];
  detail::gemm_tn_accum(x.data.data(), upstream.data.data(), g.weights.data.data(), in, batch, out);
  std::vector<Real> wt = detail::transpose_matrix(layer.weights.data.data(), in, out);
  detail::gemm_nn_accum(upstream.data.data(), wt.data(), g.x.data.data(), batch, out, in);
  return g;
}

// ---------------------------------------------------------------------------
// ReLU / dropout / L1 loss
// ---------------------------------------------------------------------------

inline Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (Real& v : y.data) v = (v > 0.0) ? v : 0.0;
  return y;
}

// Subgradient 0 at exactly 0.
inline Tensor relu_backward(const Tensor& x, const Tensor& upstream) {
  check_same_shape(x, upstream, "relu_backward");
  Tensor g = upstream;
  for (std::size_t i = 0; i < g.data.size(); ++i)
    if (x.data[i] <= 0.0) g.data[i] = 0.0;
  return g;
}

// Inverted dropout: in training mode each unit is zeroed with probability p
// and survivors are scaled by 1/(1-p); inference mode is the identity. The
// mask stores the per-unit scale so backward is a plain elementwise product.
inline Tensor dropout_forward(const Tensor& x, Real p, Rng& rng, bool training, Tensor* mask) {
  if (!(p >= 0.0 && p < 1.0)) throw InvalidProbability("dropout probability must be in [0, 1)");
  if (!training || p == 0.0) {
    if (mask) {
      *mask = Tensor(x.shape);
      mask->fill(1.0);
    }
    return x;
  }
  Tensor y(x.shape);
  Tensor local_mask(x.shape);
  const Real scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    Real keep = (rng.uniform01() >= p) ? scale : 0.0;
    local_mask.data[i] = keep;
    y.data[i] = x.data[i] * keep;
  }
  if (mask) *mask = std::move(local_mask);
  return y;
}

inline Tensor dropout_forward(const Tensor& x, Real p, std::uint64_t seed, bool training,
                              Tensor* mask) {
  Rng rng(seed);
  return dropout_forward(x, p, rng, training, mask);
}

inline Tensor dropout_backward(const Tensor& mask, const Tensor& upstream) {
  check_same_shape(mask, upstream, "dropout_backward");
  Tensor g = upstream;
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= mask.data[i];
  return g;
}

struct L1Result {
  Real loss = 0;
  Tensor grad;  // d loss / d prediction
};

inline L1Result l1_loss(const Tensor& prediction, const Tensor& target) {
  check_same_shape(prediction, target, "l1_loss");
  if (prediction.data.empty()) throw ShapeMismatch("l1_loss on empty tensors");
  L1Result out;
  out.grad = Tensor(prediction.shape);
  const Real inv = 1.0 / static_cast<Real>(prediction.data.size());
  Real acc = 0;
  for (std::size_t i = 0; i < prediction.data.size(); ++i) {
    Real d = prediction.data[i] - target.data[i];
    acc += std::abs(d);
    out.grad.data[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) * inv;
  }
  out.loss = acc * inv;
  return out;
}

}  // namespace mgcn
