#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <set>

#include "mgcn/laplacian.hpp"
#include "mgcn/primitives.hpp"
#include "test_util.hpp"

using namespace mgcn;
using mgcn::testutil::random_small_mesh;
using mgcn::testutil::to_dense;

namespace {

TriangleMesh single_triangle() {
  TriangleMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  m.faces = {{0, 1, 2}};
  return m;
}

TriangleMesh shared_edge_pair() {
  TriangleMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};
  m.faces = {{0, 1, 2}, {1, 3, 2}};
  return m;
}

// Path graph P2 as a degenerate-free mesh is impossible (needs a face), so
// tests that want P2 matrices build them directly.
SparseRealMatrix p2_laplacian() {
  std::vector<Triplet> t = {{0, 0, 1.0}, {0, 1, -1.0}, {1, 0, -1.0}, {1, 1, 1.0}};
  return SparseRealMatrix::from_triplets(2, 2, std::move(t));
}

Eigen::VectorXd dense_eigenvalues(const SparseRealMatrix& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(to_dense(m));
  return solver.eigenvalues();
}

}  // namespace

TEST(Adjacency, TriangleIsK3) {
  auto a = build_adjacency(single_triangle());
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(a.at(i, j), i == j ? 0.0 : 1.0);
}

TEST(Adjacency, SharedEdgePairDegrees) {
  auto a = build_adjacency(shared_edge_pair());
  std::vector<Index> degree(4, 0);
  Index twice_edges = 0;
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j)
      if (a.at(i, j) != 0.0) {
        ++degree[static_cast<std::size_t>(i)];
        ++twice_edges;
      }
  EXPECT_EQ(twice_edges / 2, 5);
  EXPECT_EQ(degree, (std::vector<Index>{2, 3, 3, 2}));
}

TEST(Adjacency, IcosphereDegreeCensus) {
  auto mesh = icosphere(3);
  // independent edge enumeration straight from the face list
  std::set<std::pair<Index, Index>> edges;
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k)
      edges.insert({std::min(f[k], f[(k + 1) % 3]), std::max(f[k], f[(k + 1) % 3])});
  std::vector<Index> degree(static_cast<std::size_t>(mesh.vertex_count()), 0);
  for (const auto& e : edges) {
    ++degree[static_cast<std::size_t>(e.first)];
    ++degree[static_cast<std::size_t>(e.second)];
  }

  auto a = build_adjacency(mesh);
  Index fives = 0;
  for (Index i = 0; i < mesh.vertex_count(); ++i) {
    Index row_degree =
        a.row_offsets[static_cast<std::size_t>(i) + 1] - a.row_offsets[static_cast<std::size_t>(i)];
    EXPECT_EQ(row_degree, degree[static_cast<std::size_t>(i)]);
    EXPECT_TRUE(row_degree == 5 || row_degree == 6);
    if (row_degree == 5) ++fives;
  }
  EXPECT_EQ(fives, 12);
}

TEST(Adjacency, SymmetricZeroDiagonal) {
  Rng rng(101);
  for (int i = 0; i < 10; ++i) {
    auto a = build_adjacency(random_small_mesh(rng));
    EXPECT_TRUE(a.is_symmetric(0.0));
    for (Index d = 0; d < a.rows; ++d) EXPECT_DOUBLE_EQ(a.at(d, d), 0.0);
  }
}

TEST(Laplacian, TriangleMatchesClosedForm) {
  auto l = normalized_laplacian(build_adjacency(single_triangle()));
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) EXPECT_NEAR(l.at(i, j), i == j ? 1.0 : -0.5, 1e-15);
  auto ev = dense_eigenvalues(l);
  EXPECT_NEAR(ev(0), 0.0, 1e-12);
  EXPECT_NEAR(ev(1), 1.5, 1e-12);
  EXPECT_NEAR(ev(2), 1.5, 1e-12);
}

TEST(Laplacian, NullVectorIsSqrtDegree) {
  Rng rng(103);
  for (int i = 0; i < 10; ++i) {
    auto mesh = random_small_mesh(rng);
    auto a = build_adjacency(mesh);
    auto l = normalized_laplacian(a);
    const Index n = l.rows;
    std::vector<Real> x(static_cast<std::size_t>(n)), y(static_cast<std::size_t>(n));
    for (Index v = 0; v < n; ++v) {
      Index deg = a.row_offsets[static_cast<std::size_t>(v) + 1] -
                  a.row_offsets[static_cast<std::size_t>(v)];
      x[static_cast<std::size_t>(v)] = std::sqrt(static_cast<Real>(deg));
    }
    l.multiply_vector(x.data(), y.data());
    for (Real v : y) EXPECT_NEAR(v, 0.0, 1e-12);
  }
}

TEST(Laplacian, SpectrumWithinZeroTwo) {
  Rng rng(107);
  for (int i = 0; i < 10; ++i) {
    auto l = normalized_laplacian(build_adjacency(random_small_mesh(rng)));
    auto ev = dense_eigenvalues(l);
    EXPECT_GE(ev(0), -1e-12);
    EXPECT_LE(ev(l.rows - 1), 2.0 + 1e-12);
  }
}

TEST(Eigenvalue, P2IsTwo) {
  EXPECT_NEAR(largest_eigenvalue(p2_laplacian()), 2.0, 1e-9);
}

TEST(Eigenvalue, TriangleIsOnePointFive) {
  auto l = normalized_laplacian(build_adjacency(single_triangle()));
  EXPECT_NEAR(largest_eigenvalue(l), 1.5, 1e-9);
}

TEST(Eigenvalue, MatchesDenseOracle) {
  Rng rng(109);
  for (int i = 0; i < 25; ++i) {
    auto l = normalized_laplacian(build_adjacency(random_small_mesh(rng)));
    Real power = largest_eigenvalue(l);
    auto ev = dense_eigenvalues(l);
    Real truth = ev(l.rows - 1);
    EXPECT_LE(std::abs(power - truth), 1e-8 * std::max(std::abs(truth), 1.0))
        << "mesh " << i << " with " << l.rows << " vertices";
  }
}

TEST(Eigenvalue, SingleVertexMatrix) {
  std::vector<Triplet> t = {{0, 0, 3.25}};
  auto m = SparseRealMatrix::from_triplets(1, 1, std::move(t));
  EXPECT_DOUBLE_EQ(largest_eigenvalue(m), 3.25);
}

TEST(ScaledLap, P2ClosedForm) {
  auto s = scale_laplacian(p2_laplacian(), 2.0);
  EXPECT_NEAR(s.scaled.at(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(s.scaled.at(0, 1), -1.0, 1e-15);
  EXPECT_NEAR(s.scaled.at(1, 0), -1.0, 1e-15);
  EXPECT_NEAR(s.scaled.at(1, 1), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(s.lambda_max, 2.0);
}

TEST(ScaledLap, TriangleSpectrum) {
  auto l = normalized_laplacian(build_adjacency(single_triangle()));
  auto s = scale_laplacian(l, 1.5);
  auto ev = dense_eigenvalues(s.scaled);
  EXPECT_NEAR(ev(0), -1.0, 1e-12);
  EXPECT_NEAR(ev(1), 1.0, 1e-12);
  EXPECT_NEAR(ev(2), 1.0, 1e-12);
}

TEST(ScaledLap, RejectsNonPositiveLambda) {
  EXPECT_THROW(scale_laplacian(p2_laplacian(), 0.0), NonPositiveLambda);
  EXPECT_THROW(scale_laplacian(p2_laplacian(), -1.0), NonPositiveLambda);
}

TEST(ScaledLap, InvariantsOnRandomMeshes) {
  Rng rng(113);
  for (int i = 0; i < 10; ++i) {
    auto sl = mesh_scaled_laplacian(random_small_mesh(rng));
    EXPECT_TRUE(sl.laplacian.is_symmetric(1e-12));
    EXPECT_TRUE(sl.scaled.is_symmetric(1e-12));
    // scaled = 2 L / lambda - I entrywise
    auto expect = add_scaled(2.0 / sl.lambda_max, sl.laplacian, -1.0,
                             SparseRealMatrix::identity(sl.laplacian.rows));
    auto triplets = expect.to_triplets();
    for (const auto& t : triplets) EXPECT_NEAR(sl.scaled.at(t.row, t.col), t.value, 1e-12);
    // spectrum within [-1, 1]
    auto ev = dense_eigenvalues(sl.scaled);
    EXPECT_GE(ev(0), -1.0 - 1e-9);
    EXPECT_LE(ev(sl.scaled.rows - 1), 1.0 + 1e-9);
  }
}
