#pragma once

#include <algorithm>
#include <cstddef>
#include <tuple>
#include <vector>

#include "mgcn/core.hpp"

namespace mgcn {

struct Triplet {
  Index row = 0;
  Index col = 0;
  Real value = 0;
};

// Compressed sparse row matrix of doubles. Column indices are strictly
// increasing within each row and no explicit zeros are stored.
struct SparseRealMatrix {
  Index rows = 0;
  Index cols = 0;
  std::vector<Index> row_offsets;  // size rows + 1
  std::vector<Index> col_indices;
  std::vector<Real> values;

  SparseRealMatrix() : row_offsets(1, 0) {}
  SparseRealMatrix(Index r, Index c) : rows(r), cols(c), row_offsets(static_cast<std::size_t>(r) + 1, 0) {}

  Index nnz() const { return static_cast<Index>(values.size()); }

  static SparseRealMatrix from_triplets(Index rows, Index cols, std::vector<Triplet> triplets) {
    for (const auto& t : triplets) {
      if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols)
        throw ShapeMismatch("triplet index out of range");
    }
    std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
      return std::tie(a.row, a.col) < std::tie(b.row, b.col);
    });
    SparseRealMatrix m(rows, cols);
    std::size_t i = 0;
    for (Index r = 0; r < rows; ++r) {
      while (i < triplets.size() && triplets[i].row == r) {
        Index c = triplets[i].col;
        Real v = 0;
        while (i < triplets.size() && triplets[i].row == r && triplets[i].col == c) {
          v += triplets[i].value;
          ++i;
        }
        if (v != 0.0) {
          m.col_indices.push_back(c);
          m.values.push_back(v);
        }
      }
      m.row_offsets[static_cast<std::size_t>(r) + 1] = static_cast<Index>(m.values.size());
    }
    return m;
  }

  static SparseRealMatrix identity(Index n) {
    SparseRealMatrix m(n, n);
    m.col_indices.resize(static_cast<std::size_t>(n));
    m.values.assign(static_cast<std::size_t>(n), 1.0);
    for (Index i = 0; i < n; ++i) {
      m.col_indices[static_cast<std::size_t>(i)] = i;
      m.row_offsets[static_cast<std::size_t>(i) + 1] = i + 1;
    }
    return m;
  }

  Real at(Index r, Index c) const {
    for (Index k = row_offsets[static_cast<std::size_t>(r)]; k < row_offsets[static_cast<std::size_t>(r) + 1]; ++k) {
      if (col_indices[static_cast<std::size_t>(k)] == c) return values[static_cast<std::size_t>(k)];
    }
    return 0.0;
  }

  std::vector<Triplet> to_triplets() const {
    std::vector<Triplet> out;
    out.reserve(values.size());
    for (Index r = 0; r < rows; ++r)
      for (Index k = row_offsets[static_cast<std::size_t>(r)]; k < row_offsets[static_cast<std::size_t>(r) + 1]; ++k)
        out.push_back({r, col_indices[static_cast<std::size_t>(k)], values[static_cast<std::size_t>(k)]});
    return out;
  }

  // y = A x
  void multiply_vector(const Real* x, Real* y) const {
    for (Index r = 0; r < rows; ++r) {
      Real acc = 0;
      for (Index k = row_offsets[static_cast<std::size_t>(r)]; k < row_offsets[static_cast<std::size_t>(r) + 1]; ++k)
        acc += values[static_cast<std::size_t>(k)] * x[col_indices[static_cast<std::size_t>(k)]];
      y[r] = acc;
    }
  }

  std::vector<Real> multiply_vector(const std::vector<Real>& x) const {
    if (static_cast<Index>(x.size()) != cols) throw ShapeMismatch("spmv size mismatch");
    std::vector<Real> y(static_cast<std::size_t>(rows), 0.0);
    multiply_vector(x.data(), y.data());
    return y;
  }

  // Y = A X where X is cols x width row-major; Y is rows x width row-major.
  void multiply_dense(const Real* x, Index width, Real* y) const {
    for (Index r = 0; r < rows; ++r) {
      Real* yr = y + r * width;
      std::fill(yr, yr + width, 0.0);
      for (Index k = row_offsets[static_cast<std::size_t>(r)]; k < row_offsets[static_cast<std::size_t>(r) + 1]; ++k) {
        Real v = values[static_cast<std::size_t>(k)];
        const Real* xr = x + col_indices[static_cast<std::size_t>(k)] * width;
        for (Index j = 0; j < width; ++j) yr[j] += v * xr[j];
      }
    }
  }

  SparseRealMatrix transposed() const {
    std::vector<Triplet> t;
    t.reserve(values.size());
    for (Index r = 0; r < rows; ++r)
      for (Index k = row_offsets[static_cast<std::size_t>(r)]; k < row_offsets[static_cast<std::size_t>(r) + 1]; ++k)
        t.push_back({col_indices[static_cast<std::size_t>(k)], r, values[static_cast<std::size_t>(k)]});
    return from_triplets(cols, rows, std::move(t));
  }

  bool is_symmetric(Real tol) const {
    if (rows != cols) return false;
    SparseRealMatrix t = transposed();
    if (t.col_indices != col_indices || t.row_offsets != row_offsets) {
      // structure may still match value-wise with zeros; fall back to entry checks
      for (Index r = 0; r < rows; ++r)
        for (Index k = row_offsets[static_cast<std::size_t>(r)]; k < row_offsets[static_cast<std::size_t>(r) + 1]; ++k)
          if (std::abs(values[static_cast<std::size_t>(k)] - at(col_indices[static_cast<std::size_t>(k)], r)) > tol)
            return false;
      return true;
    }
    for (std::size_t k = 0; k < values.size(); ++k)
      if (std::abs(values[k] - t.values[k]) > tol) return false;
    return true;
  }
};

// a*A + b*B, for matching shapes.
inline SparseRealMatrix add_scaled(Real a, const SparseRealMatrix& A, Real b, const SparseRealMatrix& B) {
  if (A.rows != B.rows || A.cols != B.cols) throw ShapeMismatch("add_scaled shape mismatch");
  std::vector<Triplet> t;
  t.reserve(A.values.size() + B.values.size());
  for (auto& x : A.to_triplets()) t.push_back({x.row, x.col, a * x.value});
  for (auto& x : B.to_triplets()) t.push_back({x.row, x.col, b * x.value});
  return SparseRealMatrix::from_triplets(A.rows, A.cols, std::move(t));
}

}  // namespace mgcn
