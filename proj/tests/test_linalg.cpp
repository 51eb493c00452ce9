// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <random>

#include "reference.hpp"
#include "tpatch/errors.hpp"
#include "tpatch/linalg.hpp"

using namespace tpatch;

namespace {

Mat spd(std::size_t d, std::uint64_t seed) {
  const std::vector<Vec> ys = sample_spherical(d, 3 * d, 1.0, seed);
  GramAccumulator acc(d);
  acc.add_batch(ys, ys);
  return acc.z();
}

}  // namespace

TEST(Mat, ConstructionAndAccess) {
  Mat m{{1, 2, 3}, {4, 5, 6}};
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m(1, 2), 6);
  EXPECT_EQ(m.column(1), (Vec{2, 5}));
  EXPECT_EQ(Mat::from_columns(std::vector<Vec>{{1, 4}, {2, 5}, {3, 6}}), m);
  EXPECT_EQ(Mat::from_rows(std::vector<Vec>{{1, 2, 3}, {4, 5, 6}}), m);
  EXPECT_THROW(Mat(2, 2, Vec{1, 2, 3}), DimensionError);
}

TEST(Mat, ProductsMatchEigen) {
  Rng rng(11);
  for (auto [r, k, c] : {std::tuple{3, 5, 2}, std::tuple{7, 7, 7}, std::tuple{1, 9, 4}}) {
    const Mat a = random_normal_mat(rng, r, k);
    const Mat b = random_normal_mat(rng, k, c);
    const ref::Matrix expect = ref::to_eigen(a) * ref::to_eigen(b);
    EXPECT_LE(max_abs_diff(matmul(a, b), ref::from_eigen(expect)), 1e-13);
    EXPECT_EQ(transpose(a), ref::from_eigen(ref::to_eigen(a).transpose()));
    const Vec v = random_normal_vec(rng, k);
    EXPECT_LE(max_abs_diff(matvec(a, v), ref::vec_from_eigen(ref::Vector(ref::to_eigen(a) * ref::to_eigen(v)))),
              1e-13);
  }
  EXPECT_THROW(matmul(Mat(2, 3), Mat(2, 3)), DimensionError);
  EXPECT_THROW(add(Mat(2, 3), Mat(3, 2)), DimensionError);
}

TEST(Mat, NormsAndOuter) {
  const Mat m{{3, 0}, {0, -4}};
  EXPECT_DOUBLE_EQ(frobenius(m), 5.0);
  EXPECT_DOUBLE_EQ(max_abs(m), 4.0);
  EXPECT_DOUBLE_EQ(trace(m), -1.0);
  EXPECT_EQ(outer(Vec{1, 2}, Vec{3, 4, 5}), (Mat{{3, 4, 5}, {6, 8, 10}}));
  EXPECT_DOUBLE_EQ(dot(Vec{1, 2, 3}, Vec{4, 5, 6}), 32.0);
  EXPECT_THROW(dot(Vec{1}, Vec{1, 2}), DimensionError);
  EXPECT_FALSE(all_finite(Vec{1.0, std::nan("")}));
}

TEST(Cholesky, MatchesEigenAndSolves) {
  for (std::size_t d : {1u, 4u, 12u}) {
    const Mat z = spd(d, 100 + d);
    const Mat l = cholesky(z);
    const ref::Matrix expect = ref::to_eigen(z).llt().matrixL();
    EXPECT_LE(max_abs_diff(l, ref::from_eigen(expect)), 1e-12 * max_abs(z));

    Rng rng(d);
    const Mat b = random_normal_mat(rng, 5, d);
    const Mat m = solve_right(b, z);
    const ref::Matrix oracle =
        ref::to_eigen(z).transpose().ldlt().solve(ref::to_eigen(b).transpose()).transpose();
    EXPECT_LE(max_abs_diff(m, ref::from_eigen(oracle)), 1e-10 * (1.0 + max_abs(m)));
  }
}

TEST(Cholesky, SingularReportsRank) {
  const std::vector<Vec> ys = sample_spherical(6, 3, 1.0, 1);
  GramAccumulator acc(6);
  acc.add_batch(ys, ys);
  try {
    cholesky(acc.z());
    FAIL() << "expected SingularMatrixError";
  } catch (const SingularMatrixError& e) {
    EXPECT_EQ(e.rank(), 3u);
    EXPECT_EQ(e.dim(), 6u);
    EXPECT_NE(std::string(e.what()).find("ridge"), std::string::npos);
  }
  // A ridge makes the same matrix factorable.
  EXPECT_NO_THROW(cholesky(acc.z(), 1e-6));
  EXPECT_THROW(cholesky(Mat{{-1.0}}, 1e-3), NumericalError);
}

TEST(Rank, MatchesEigenFullPivLu) {
  Rng rng(3);
  for (std::size_t r : {0u, 1u, 3u, 6u}) {
    Mat m(6, 6);
    for (std::size_t i = 0; i < r; ++i)
      m = add(m, outer(random_normal_vec(rng, 6), random_normal_vec(rng, 6)));
    Eigen::FullPivLU<ref::Matrix> lu(ref::to_eigen(m));
    lu.setThreshold(1e-10);
    EXPECT_EQ(rank(m), static_cast<std::size_t>(lu.rank())) << "r=" << r;
    EXPECT_EQ(rank(m), r);
  }
}

TEST(Determinant, MatchesEigen) {
  Rng rng(5);
  for (std::size_t d : {1u, 3u, 8u}) {
    const Mat m = random_normal_mat(rng, d, d);
    const double expect = ref::to_eigen(m).determinant();
    EXPECT_NEAR(determinant(m), expect, 1e-11 * (1.0 + std::abs(expect)));
  }
  EXPECT_EQ(determinant(Mat{{1, 2}, {2, 4}}), 0.0);
}

TEST(Inverse, MatchesEigenAndRejectsSingular) {
  Rng rng(8);
  const Mat m = random_normal_mat(rng, 7, 7);
  const ref::Matrix expect = ref::to_eigen(m).inverse();
  EXPECT_LE(max_abs_diff(inverse(m), ref::from_eigen(expect)), 1e-10 * (1.0 + expect.cwiseAbs().maxCoeff()));
  EXPECT_THROW(inverse(Mat{{1, 2}, {2, 4}}), SingularMatrixError);
}

TEST(OrthonormalBasis, SpansAndIsOrthonormal) {
  Rng rng(2);
  std::vector<Vec> vs;
  for (int i = 0; i < 3; ++i) vs.push_back(random_normal_vec(rng, 7));
  vs.push_back(add(vs[0], scale(vs[1], 2.0)));  // dependent
  const auto basis = orthonormal_basis(vs);
  ASSERT_EQ(basis.size(), 3u);
  for (std::size_t i = 0; i < basis.size(); ++i)
    for (std::size_t j = 0; j < basis.size(); ++j)
      EXPECT_NEAR(dot(basis[i], basis[j]), i == j ? 1.0 : 0.0, 1e-13);
  // Every input is reproduced by its projection onto the basis.
  for (const Vec& v : vs) {
    Vec proj(7, 0.0);
    for (const Vec& q : basis) proj = add(proj, scale(q, dot(q, v)));
    EXPECT_LE(max_abs_diff(proj, v), 1e-12);
  }
  EXPECT_TRUE(orthonormal_basis(std::vector<Vec>{Vec(3, 0.0)}).empty());
}

TEST(PsdPivots, CountRank) {
  const std::vector<Vec> ys = sample_spherical(5, 2, 1.0, 4);
  GramAccumulator acc(5);
  acc.add_batch(ys, ys);
  const Vec pivots = psd_pivots(acc.z());
  ASSERT_EQ(pivots.size(), 5u);
  int large = 0;
  for (double p : pivots) large += p > 1e-10 ? 1 : 0;
  EXPECT_EQ(large, 2);
}

TEST(Rng, EngineIsStandardMt19937_64) {
  // The C++ standard pins the 10000th output for the default seed.
  Rng rng(5489u);
  std::uint64_t x = 0;
  for (int i = 0; i < 10000; ++i) x = rng.next_u64();
  EXPECT_EQ(x, 9981545732273789042ULL);
}

TEST(Rng, UniformAndNormalMoments) {
  Rng rng(42);
  double sum = 0, sum2 = 0, umin = 1, umax = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    const double z = rng.normal();
    sum += z;
    sum2 += z * z;
  }
  EXPECT_GE(umin, 0.0);
  EXPECT_LT(umax, 1.0);
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sum2 / n, 1.0, 0.01);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(rng.below(7), 7u);
}

TEST(Rng, SeedsAreReproducible) {
  EXPECT_EQ(sample_spherical(4, 3, 0.5, 9), sample_spherical(4, 3, 0.5, 9));
  EXPECT_NE(sample_spherical(4, 3, 0.5, 9), sample_spherical(4, 3, 0.5, 10));
  EXPECT_THROW(sample_spherical(0, 3, 1.0, 0), InputError);
  EXPECT_THROW(sample_spherical(3, 3, -1.0, 0), InputError);
}

TEST(RandomOrthogonal, IsOrthogonal) {
  for (std::size_t d : {1u, 5u, 16u}) {
    const Mat q = random_orthogonal(d, d);
    EXPECT_LE(max_abs_diff(matmul(transpose(q), q), Mat::identity(d)), 1e-13);
  }
}

TEST(GramAccumulator, BatchEqualsSequentialAndEigen) {
  const auto ds = sample_spherical(5, 40, 1.0, 1);
  const auto as = sample_spherical(5, 40, 1.0, 2);
  GramAccumulator seq(5), batch(5);
  for (std::size_t i = 0; i < ds.size(); ++i) seq.add(ds[i], as[i]);
  batch.add_batch(ds, as);
  EXPECT_EQ(seq.z(), batch.z());
  EXPECT_EQ(seq.b(), batch.b());
  EXPECT_EQ(batch.count(), 40u);
  const ref::Matrix a = ref::stack(as), dm = ref::stack(ds);
  EXPECT_LE(max_abs_diff(batch.z(), ref::from_eigen(a.transpose() * a)), 1e-12);
  EXPECT_LE(max_abs_diff(batch.b(), ref::from_eigen(dm.transpose() * a)), 1e-12);
}
