#pragma once

#include <cmath>
#include <set>
#include <utility>
#include <vector>

#include "mgcn/core.hpp"
#include "mgcn/mesh.hpp"
#include "mgcn/sparse.hpp"

namespace mgcn {

// Binary face-edge adjacency: vertices are adjacent iff they co-occur in a
// face. Symmetric, zero diagonal.
inline SparseRealMatrix build_adjacency(const TriangleMesh& mesh) {
  validate_mesh(mesh);
  const Index n = mesh.vertex_count();
  std::set<std::pair<Index, Index>> edges;
  for (const auto& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      Index a = f[k], b = f[(k + 1) % 3];
      edges.insert({std::min(a, b), std::max(a, b)});
    }
  }
  std::vector<Triplet> t;
  t.reserve(edges.size() * 2);
  for (const auto& [a, b] : edges) {
    t.push_back({a, b, 1.0});
    t.push_back({b, a, 1.0});
  }
  auto adj = SparseRealMatrix::from_triplets(n, n, std::move(t));
  for (Index r = 0; r < n; ++r)
    if (adj.row_offsets[static_cast<std::size_t>(r)] == adj.row_offsets[static_cast<std::size_t>(r) + 1])
      throw IsolatedVertex("adjacency row " + std::to_string(r) + " is empty");
  return adj;
}

// L = I - D^{-1/2} A D^{-1/2}
inline SparseRealMatrix normalized_laplacian(const SparseRealMatrix& adjacency) {
  if (adjacency.rows != adjacency.cols) throw ShapeMismatch("adjacency must be square");
  const Index n = adjacency.rows;
  std::vector<Real> degree(static_cast<std::size_t>(n), 0.0);
  for (Index r = 0; r < n; ++r) {
    for (Index k = adjacency.row_offsets[static_cast<std::size_t>(r)];
         k < adjacency.row_offsets[static_cast<std::size_t>(r) + 1]; ++k)
      degree[static_cast<std::size_t>(r)] += adjacency.values[static_cast<std::size_t>(k)];
    if (degree[static_cast<std::size_t>(r)] <= 0)
      throw ZeroDegree("vertex " + std::to_string(r) + " has degree 0");
  }
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(adjacency.nnz() + n));
  for (Index r = 0; r < n; ++r) {
    t.push_back({r, r, 1.0});
    for (Index k = adjacency.row_offsets[static_cast<std::size_t>(r)];
         k < adjacency.row_offsets[static_cast<std::size_t>(r) + 1]; ++k) {
      Index c = adjacency.col_indices[static_cast<std::size_t>(k)];
      Real a = adjacency.values[static_cast<std::size_t>(k)];
      t.push_back({r, c, -a / std::sqrt(degree[static_cast<std::size_t>(r)] * degree[static_cast<std::size_t>(c)])});
    }
  }
  return SparseRealMatrix::from_triplets(n, n, std::move(t));
}

// Largest eigenvalue of a symmetric matrix by power iteration from the
// normalized all-ones vector. When that start vector lies in the null space
// of the matrix (bipartite path graphs do this), the iteration restarts from
// a deterministic index-based vector.
inline Real largest_eigenvalue(const SparseRealMatrix& matrix, Real tolerance = 1e-9,
                               long max_iterations = 2000000) {
  if (matrix.rows != matrix.cols) throw ShapeMismatch("matrix must be square");
  const Index n = matrix.rows;
  if (n == 0) throw ShapeMismatch("empty matrix");
  if (n == 1) return matrix.at(0, 0);

  // Deterministic pseudo-random start. A structured start (e.g. all ones) is
  // exactly orthogonal to the dominant eigenspace on symmetric meshes and the
  // iteration would lock onto a lower eigenvalue with a deceptively small
  // residual.
  std::vector<Real> x(static_cast<std::size_t>(n));
  {
    Real s = 0;
    for (Index i = 0; i < n; ++i) {
      std::uint64_t h = (static_cast<std::uint64_t>(i) + 1) * 0x9e3779b97f4a7c15ULL;
      h ^= h >> 29;
      x[static_cast<std::size_t>(i)] =
          0.25 + static_cast<Real>(h % 9973) / 9973.0;  // in (0.25, 1.25)
      s += x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
    }
    s = std::sqrt(s);
    for (auto& v : x) v /= s;
  }

  std::vector<Real> y(static_cast<std::size_t>(n));
  Real lambda = 0;
  for (long it = 0; it < max_iterations; ++it) {
    matrix.multiply_vector(x.data(), y.data());
    Real rayleigh = 0, ynorm2 = 0;
    for (Index i = 0; i < n; ++i) {
      rayleigh += x[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)];
      ynorm2 += y[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)];
    }
    Real ynorm = std::sqrt(ynorm2);
    if (ynorm < 1e-300) throw NoConvergence("power iteration start vector was annihilated");
    // For symmetric M the Rayleigh estimate is within ||Mx - rayleigh*x|| of
    // an eigenvalue, and the iteration steers x toward the dominant one.
    Real resid2 = 0;
    for (Index i = 0; i < n; ++i) {
      Real r = y[static_cast<std::size_t>(i)] - rayleigh * x[static_cast<std::size_t>(i)];
      resid2 += r * r;
    }
    lambda = rayleigh;
    if (std::sqrt(resid2) <= tolerance * std::max(std::abs(lambda), Real(1e-30))) return lambda;
    for (Index i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] / ynorm;
  }
  throw NoConvergence("power iteration did not converge in " + std::to_string(max_iterations) +
                      " iterations (last estimate " + std::to_string(lambda) + ")");
}

// L with its Chebyshev-ready rescaling 2L/lambda_max - I.
struct ScaledLaplacian {
  SparseRealMatrix laplacian;
  Real lambda_max = 0;
  SparseRealMatrix scaled;
};

inline ScaledLaplacian scale_laplacian(const SparseRealMatrix& laplacian, Real lambda_max) {
  if (!(lambda_max > 0)) throw NonPositiveLambda("lambda_max must be positive");
  ScaledLaplacian out;
  out.laplacian = laplacian;
  out.lambda_max = lambda_max;
  out.scaled = add_scaled(2.0 / lambda_max, laplacian, -1.0, SparseRealMatrix::identity(laplacian.rows));
  return out;
}

inline ScaledLaplacian mesh_scaled_laplacian(const TriangleMesh& mesh) {
  auto lap = normalized_laplacian(build_adjacency(mesh));
  Real lmax = largest_eigenvalue(lap);
  return scale_laplacian(lap, lmax);
}

}  // namespace mgcn
