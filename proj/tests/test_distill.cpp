// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "reference.hpp"
#include "tpatch/distill.hpp"
#include "tpatch/errors.hpp"

using namespace tpatch;

namespace {

PatchCollection random_collection(std::size_t d, std::size_t n, std::uint64_t seed) {
  const auto as = sample_spherical(d, n, 1.0, seed);
  const auto ds = sample_spherical(d, n, 0.3, seed + 1000);
  PatchCollection coll;
  for (std::size_t i = 0; i < n; ++i) coll.add(ds[i], as[i]);
  return coll;
}

// Rows of the Eigen matrices are pairs.
ref::Matrix eigen_b(const PatchCollection& c) { return ref::stack(c.deltas).transpose() * ref::stack(c.attns); }
ref::Matrix eigen_z(const PatchCollection& c) { return ref::stack(c.attns).transpose() * ref::stack(c.attns); }

double eigen_loss(const ref::Matrix& m, const PatchCollection& c) {
  const ref::Matrix resid = ref::stack(c.attns) * m.transpose() - ref::stack(c.deltas);
  return resid.squaredNorm();
}

}  // namespace

TEST(PatchCollection, RejectsBadPairs) {
  PatchCollection c;
  EXPECT_THROW(c.add(Vec{1, 2}, Vec{1, 2, 3}), DimensionError);
  EXPECT_THROW(c.add(Vec{1, 2}, Vec{0, 0}), NumericalError);
  c.add(Vec{1, 2}, Vec{3, 4}, "p0");
  EXPECT_EQ(c.size(), 1u);
  EXPECT_EQ(c.width(), 2u);
}

TEST(SolveExact, MatchesEigenNormalEquations) {
  for (std::size_t d : {4u, 8u, 16u}) {
    const PatchCollection c = random_collection(d, 3 * d, d);
    const ThoughtPatch tp = solve_exact(c);
    const ref::Matrix oracle = eigen_z(c).transpose().ldlt().solve(eigen_b(c).transpose()).transpose();
    EXPECT_LE(max_abs_diff(tp.delta_mat, ref::from_eigen(oracle)), 1e-10);
    // Stationarity of the least-squares objective.
    EXPECT_LE(frobenius(grad_loss(tp.delta_mat, c)), 1e-9 * (1.0 + frobenius(ref::from_eigen(eigen_b(c)))));
    EXPECT_NEAR(loss(tp.delta_mat, c), eigen_loss(ref::to_eigen(tp.delta_mat), c), 1e-10);
    const ref::Vector mean = ref::stack(c.deltas).colwise().mean();
    EXPECT_LE(max_abs_diff(tp.delta_vec, ref::vec_from_eigen(mean)), 1e-15);
  }
}

TEST(SolveExact, BeatsPerturbations) {
  const PatchCollection c = random_collection(6, 20, 3);
  const Mat m = solve_exact(c).delta_mat;
  const double best = loss(m, c);
  Rng rng(99);
  for (int i = 0; i < 1000; ++i) {
    const Mat e = random_normal_mat(rng, 6, 6, 1e-3);
    EXPECT_GE(loss(add(m, e), c), best - 1e-12);
  }
}

TEST(SolveExact, SingularGramReportsRank) {
  const PatchCollection c = random_collection(8, 3, 1);
  try {
    solve_exact(c);
    FAIL() << "expected SingularMatrixError";
  } catch (const SingularMatrixError& e) {
    EXPECT_EQ(e.rank(), 3u);
    EXPECT_EQ(e.dim(), 8u);
  }
  const ThoughtPatch ridged = solve_exact(c, 0.5);
  const ref::Matrix z = eigen_z(c) + 0.5 * ref::Matrix::Identity(8, 8);
  const ref::Matrix oracle = z.ldlt().solve(eigen_b(c).transpose()).transpose();
  EXPECT_LE(max_abs_diff(ridged.delta_mat, ref::from_eigen(oracle)), 1e-12);
}

TEST(SolveMinNorm, PseudoInverse) {
  const PatchCollection c = random_collection(8, 3, 2);
  const Mat m = solve_min_norm(c);
  const Eigen::CompleteOrthogonalDecomposition<ref::Matrix> cod(eigen_z(c));
  const ref::Matrix oracle = eigen_b(c) * cod.pseudoInverse();
  EXPECT_LE(max_abs_diff(m, ref::from_eigen(oracle)), 1e-10);
  // Full rank: same as the exact solve.
  const PatchCollection full = random_collection(5, 12, 4);
  EXPECT_LE(max_abs_diff(solve_min_norm(full), solve_exact(full).delta_mat), 1e-10);
}

TEST(RankOneSum, MatchesLoopOracle) {
  const PatchCollection c = random_collection(5, 9, 5);
  for (bool attn_norm : {false, true}) {
    ref::Matrix oracle = ref::Matrix::Zero(5, 5);
    for (std::size_t i = 0; i < c.size(); ++i) {
      const ref::Vector a = ref::to_eigen(c.attns[i]);
      ref::Matrix term = ref::to_eigen(c.deltas[i]) * a.transpose();
      if (attn_norm) term /= a.norm();
      oracle += term;
    }
    oracle *= 0.25;
    EXPECT_LE(max_abs_diff(solve_rank_one_sum(c, 0.25, attn_norm), ref::from_eigen(oracle)), 1e-14);
  }
}

TEST(Corrected, MatchesFormulaAndDefaultLambda) {
  const PatchCollection c = random_collection(6, 30, 6);
  const double lambda = 0.01;
  const ref::Matrix b = eigen_b(c), z = eigen_z(c);
  const ref::Matrix oracle = lambda * b - lambda * lambda * b * z;
  EXPECT_LE(max_abs_diff(solve_corrected(c, lambda), ref::from_eigen(oracle)), 1e-13);
  EXPECT_NEAR(default_lambda(c), 6.0 / z.trace(), 1e-18);
}

TEST(SolverSpec, RoundTrip) {
  for (const char* s : {"exact", "ridge:0.001", "rank_one_sum:0.015", "rank_one_sum:0.5:attn_norm",
                        "corrected:0.25"}) {
    EXPECT_EQ(SolverSpec::parse(s).to_string(), s);
  }
  EXPECT_THROW(SolverSpec::parse("ridge"), InputError);
  EXPECT_THROW(SolverSpec::parse("newton:1"), InputError);
}

TEST(Nonuniqueness, TwoMinimizersSameLoss) {
  const PatchCollection c = random_collection(8, 3, 7);
  const NonUniqueness nu = demonstrate_nonuniqueness(c, 1, 0.5);
  EXPECT_GE(nu.matrix_gap, 0.1);
  const double base = loss(solve_min_norm(c), c);
  EXPECT_NEAR(loss(nu.first, c), base, 1e-10);
  EXPECT_NEAR(loss(nu.second, c), base, 1e-10);
  EXPECT_LE(nu.loss_gap, 1e-10);
  EXPECT_THROW(demonstrate_nonuniqueness(random_collection(4, 10, 8)), NumericalError);
}

TEST(ZDiagnostics, RankTraceIsotropy) {
  const PatchCollection c = random_collection(6, 4, 9);
  const ZDiagnostics zd = z_diagnostics(c);
  EXPECT_EQ(zd.rank, 4u);
  EXPECT_NEAR(zd.trace, eigen_z(c).trace(), 1e-12);
  EXPECT_NEAR(z_diagnostics(Mat::identity(5)).isotropy, 0.0, 1e-15);
}
