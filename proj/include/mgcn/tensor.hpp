#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "mgcn/core.hpp"

namespace mgcn {

// Dense row-major tensor. The last dimension is contiguous.
struct Tensor {
  std::vector<Index> shape;
  std::vector<Real> data;

  Tensor() = default;
  explicit Tensor(std::vector<Index> s) : shape(std::move(s)), data(size_of(shape), 0.0) {}

  static std::size_t size_of(const std::vector<Index>& s) {
    std::size_t n = 1;
    for (Index d : s) {
      if (d < 0) throw ShapeMismatch("negative tensor dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t size() const { return data.size(); }
  Index dim(std::size_t i) const { return shape.at(i); }
  Index rank() const { return static_cast<Index>(shape.size()); }

  Real& at2(Index r, Index c) {
    return data[static_cast<std::size_t>(r * shape[1] + c)];
  }
  Real at2(Index r, Index c) const {
    return data[static_cast<std::size_t>(r * shape[1] + c)];
  }
  Real& at3(Index i, Index j, Index k) {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  Real at3(Index i, Index j, Index k) const {
    return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  Real& at4(Index i, Index j, Index k, Index l) {
    return data[static_cast<std::size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }
  Real at4(Index i, Index j, Index k, Index l) const {
    return data[static_cast<std::size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }

  void fill(Real v) { std::fill(data.begin(), data.end(), v); }

  Tensor reshaped(std::vector<Index> s) const {
    if (size_of(s) != data.size()) throw ShapeMismatch("reshape changes element count");
    Tensor out;
    out.shape = std::move(s);
    out.data = data;
    return out;
  }

  static std::string shape_string(const std::vector<Index>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += ", ";
      out += std::to_string(s[i]);
    }
    return out + ")";
  }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape != b.shape)
    throw ShapeMismatch(std::string(what) + ": " + Tensor::shape_string(a.shape) + " vs " +
                        Tensor::shape_string(b.shape));
}

}  // namespace mgcn
