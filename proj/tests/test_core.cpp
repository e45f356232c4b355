#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "mgcn/rng.hpp"
#include "mgcn/sparse.hpp"
#include "mgcn/tensor.hpp"

using namespace mgcn;

TEST(Rng, SameSeedSameSequence) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiffer) {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 64; ++i)
    if (a.next_u64() == b.next_u64()) ++same;
  EXPECT_LT(same, 2);
}

TEST(Rng, Uniform01Range) {
  Rng r(7);
  for (int i = 0; i < 10000; ++i) {
    Real u = r.uniform01();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Rng, UniformIntervalRange) {
  Rng r(9);
  for (int i = 0; i < 1000; ++i) {
    Real u = r.uniform(-2.5, 3.5);
    EXPECT_GE(u, -2.5);
    EXPECT_LT(u, 3.5);
  }
}

TEST(Rng, UniformIndexBounds) {
  Rng r(11);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 5000; ++i) {
    std::uint64_t k = r.uniform_index(7);
    EXPECT_LT(k, 7u);
    seen.insert(k);
  }
  EXPECT_EQ(seen.size(), 7u);  // all residues hit
}

TEST(Rng, NormalMoments) {
  Rng r(13);
  const int n = 200000;
  Real sum = 0, sumsq = 0;
  for (int i = 0; i < n; ++i) {
    Real x = r.normal();
    sum += x;
    sumsq += x * x;
  }
  Real mean = sum / n;
  Real var = sumsq / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.03);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(17);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  std::vector<int> orig = v;
  r.shuffle(v);
  EXPECT_NE(v, orig);  // astronomically unlikely to be identity
  std::sort(v.begin(), v.end());
  EXPECT_EQ(v, orig);
}

TEST(Rng, MixSeedSpreads) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(mix_seed(42, i));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_NE(mix_seed(1, 2), mix_seed(2, 1));
  EXPECT_NE(mix_seed(1, 2, 3), mix_seed(1, 2));
}

TEST(Sparse, FromTripletsSortsAndSums) {
  std::vector<Triplet> t = {{1, 2, 3.0}, {0, 1, 1.0}, {1, 2, 2.0}, {0, 0, 4.0}, {1, 0, 0.0}};
  auto m = SparseRealMatrix::from_triplets(2, 3, std::move(t));
  EXPECT_EQ(m.rows, 2);
  EXPECT_EQ(m.cols, 3);
  EXPECT_DOUBLE_EQ(m.at(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(m.at(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(m.at(1, 2), 5.0);   // duplicates summed
  EXPECT_DOUBLE_EQ(m.at(1, 0), 0.0);   // explicit zero dropped
  EXPECT_EQ(m.values.size(), 3u);
  // strictly increasing column indices within each row
  for (Index r = 0; r < m.rows; ++r)
    for (Index k = m.row_offsets[static_cast<std::size_t>(r)] + 1;
         k < m.row_offsets[static_cast<std::size_t>(r) + 1]; ++k)
      EXPECT_LT(m.col_indices[static_cast<std::size_t>(k - 1)],
                m.col_indices[static_cast<std::size_t>(k)]);
}

TEST(Sparse, OutOfRangeTripletThrows) {
  std::vector<Triplet> t = {{2, 0, 1.0}};
  EXPECT_THROW(SparseRealMatrix::from_triplets(2, 2, std::move(t)), ShapeMismatch);
}

TEST(Sparse, IdentityAndMultiply) {
  auto id = SparseRealMatrix::identity(4);
  std::vector<Real> x = {1, 2, 3, 4}, y(4);
  id.multiply_vector(x.data(), y.data());
  EXPECT_EQ(x, y);
}

TEST(Sparse, MultiplyVectorMatchesManual) {
  std::vector<Triplet> t = {{0, 0, 2.0}, {0, 2, -1.0}, {1, 1, 3.0}, {2, 0, 1.0}, {2, 2, 5.0}};
  auto m = SparseRealMatrix::from_triplets(3, 3, std::move(t));
  std::vector<Real> x = {1, -2, 4}, y(3);
  m.multiply_vector(x.data(), y.data());
  EXPECT_DOUBLE_EQ(y[0], 2.0 * 1 - 1.0 * 4);
  EXPECT_DOUBLE_EQ(y[1], 3.0 * -2);
  EXPECT_DOUBLE_EQ(y[2], 1.0 * 1 + 5.0 * 4);
}

TEST(Sparse, MultiplyDenseMatchesColumns) {
  Rng rng(23);
  std::vector<Triplet> t;
  for (int i = 0; i < 30; ++i)
    t.push_back({static_cast<Index>(rng.uniform_index(6)), static_cast<Index>(rng.uniform_index(6)),
                 rng.uniform(-1, 1)});
  auto m = SparseRealMatrix::from_triplets(6, 6, std::move(t));
  const Index width = 3;
  std::vector<Real> x(6 * width), y(6 * width);
  for (Real& v : x) v = rng.uniform(-1, 1);
  m.multiply_dense(x.data(), width, y.data());
  for (Index c = 0; c < width; ++c) {
    std::vector<Real> col(6), out(6);
    for (Index r = 0; r < 6; ++r) col[static_cast<std::size_t>(r)] = x[static_cast<std::size_t>(r * width + c)];
    m.multiply_vector(col.data(), out.data());
    for (Index r = 0; r < 6; ++r)
      EXPECT_NEAR(out[static_cast<std::size_t>(r)], y[static_cast<std::size_t>(r * width + c)], 1e-15);
  }
}

TEST(Sparse, TransposeRoundTrip) {
  std::vector<Triplet> t = {{0, 1, 2.0}, {2, 0, -3.0}, {1, 1, 1.5}};
  auto m = SparseRealMatrix::from_triplets(3, 2, std::move(t));
  auto mt = m.transposed();
  EXPECT_EQ(mt.rows, 2);
  EXPECT_EQ(mt.cols, 3);
  EXPECT_DOUBLE_EQ(mt.at(1, 0), 2.0);
  EXPECT_DOUBLE_EQ(mt.at(0, 2), -3.0);
  auto back = mt.transposed();
  EXPECT_EQ(back.to_triplets().size(), m.to_triplets().size());
  for (const auto& tr : back.to_triplets()) EXPECT_DOUBLE_EQ(m.at(tr.row, tr.col), tr.value);
}

TEST(Sparse, SymmetryCheck) {
  std::vector<Triplet> sym = {{0, 1, 2.0}, {1, 0, 2.0}, {0, 0, 1.0}};
  EXPECT_TRUE(SparseRealMatrix::from_triplets(2, 2, std::move(sym)).is_symmetric(1e-12));
  std::vector<Triplet> asym = {{0, 1, 2.0}, {1, 0, 1.0}};
  EXPECT_FALSE(SparseRealMatrix::from_triplets(2, 2, std::move(asym)).is_symmetric(1e-12));
}

TEST(Sparse, AddScaled) {
  auto a = SparseRealMatrix::identity(3);
  std::vector<Triplet> t = {{0, 1, 1.0}, {1, 0, 1.0}};
  auto b = SparseRealMatrix::from_triplets(3, 3, std::move(t));
  auto c = add_scaled(2.0, a, -3.0, b);
  EXPECT_DOUBLE_EQ(c.at(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(c.at(0, 1), -3.0);
  EXPECT_DOUBLE_EQ(c.at(2, 2), 2.0);
}

TEST(Tensor, ShapeAndIndexing) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  t.at3(1, 2, 3) = 7.0;
  EXPECT_DOUBLE_EQ(t.data[23], 7.0);
  Tensor m({3, 2});
  m.at2(2, 1) = -1.0;
  EXPECT_DOUBLE_EQ(m.data[5], -1.0);
  Tensor q({2, 2, 2, 2});
  q.at4(1, 0, 1, 0) = 3.0;
  EXPECT_DOUBLE_EQ(q.data[10], 3.0);
}

TEST(Tensor, ReshapePreservesCount) {
  Tensor t({2, 6});
  t.data[5] = 9.0;
  Tensor r = t.reshaped({3, 4});
  EXPECT_DOUBLE_EQ(r.data[5], 9.0);
  EXPECT_THROW(t.reshaped({5, 2}), ShapeMismatch);
}

TEST(Tensor, SameShapeCheck) {
  Tensor a({2, 2}), b({2, 2}), c({4});
  EXPECT_NO_THROW(check_same_shape(a, b, "t"));
  EXPECT_THROW(check_same_shape(a, c, "t"), ShapeMismatch);
}
