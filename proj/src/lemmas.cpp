// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpatch/lemmas.hpp"

#include <cmath>
#include <sstream>

#include "tpatch/distill.hpp"
#include "tpatch/errors.hpp"
#include "tpatch/format.hpp"
#include "tpatch/linalg.hpp"

namespace tpatch {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t size) {
  return seed * 0x9E3779B97F4A7C15ULL + tag * 1000003ULL + size;
}

Mat gram(std::span<const Vec> ys) {
  GramAccumulator acc(ys.front().size());
  acc.add_batch(ys, ys);
  return acc.z();
}

std::vector<Vec> random_vectors(Rng& rng, std::size_t d, std::size_t n) {
  std::vector<Vec> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_normal_vec(rng, d));
  return out;
}

PatchCollection random_collection(Rng& rng, std::size_t d, std::size_t n) {
  PatchCollection coll;
  for (std::size_t i = 0; i < n; ++i) {
    Vec delta = random_normal_vec(rng, d);
    coll.add(std::move(delta), random_normal_vec(rng, d));
  }
  return coll;
}

// Collects per-size failures into a single result.
class Check {
 public:
  explicit Check(std::string name) { result_.name = std::move(name); }

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      failed_ = true;
      if (!fail_detail_.empty()) fail_detail_ += "; ";
      fail_detail_ += what;
    }
  }
  void note(const std::string& what) {
    if (!note_.empty()) note_ += "; ";
    note_ += what;
  }
  LemmaResult done() {
    result_.pass = !failed_;
    result_.detail = failed_ ? fail_detail_ : note_;
    return result_;
  }

 private:
  LemmaResult result_;
  bool failed_ = false;
  std::string fail_detail_;
  std::string note_;
};

std::string d_str(std::size_t d) { return "d=" + std::to_string(d); }

}  // namespace

LemmaResult lemma_rank_bound(const LemmaOptions& opt) {
  Check check("rank_bound");
  double worst = 0.0;
  for (std::size_t d : opt.sizes) {
    Rng rng(derive_seed(opt.seed, 1, d));
    for (std::size_t r : {std::size_t{1}, d / 2, d - 1}) {
      if (r == 0) continue;
      Mat a(d, d);
      std::vector<Vec> us;
      for (std::size_t i = 0; i < r; ++i) {
        const Vec u = random_normal_vec(rng, d);
        a = add(a, outer(u, random_normal_vec(rng, d)));
        us.push_back(u);
      }
      const std::size_t rk = rank(a, 1e-10);
      check.expect(rk <= r, d_str(d) + " rank " + std::to_string(rk) + " > " + std::to_string(r));
      // image(A) ⊆ span(u): appending A's columns to the u's adds no directions.
      std::vector<Vec> both = us;
      for (std::size_t j = 0; j < d; ++j) both.push_back(a.column(j));
      check.expect(orthonormal_basis(both, 1e-9).size() == orthonormal_basis(us, 1e-9).size(),
                   d_str(d) + " image leaves span(u)");
      worst = std::max(worst, static_cast<double>(rk) / static_cast<double>(r));
    }
  }
  check.note("max rank/r " + format_double(worst));
  return check.done();
}

LemmaResult lemma_span_iff_invertible(const LemmaOptions& opt) {
  Check check("span_iff_invertible");
  for (std::size_t d : opt.sizes) {
    Rng rng(derive_seed(opt.seed, 2, d));
    const Mat spanning = gram(random_vectors(rng, d, d + 3));
    check.expect(rank(spanning, 1e-10) == d, d_str(d) + " spanning set gives singular Z");
    try {
      cholesky(spanning);
    } catch (const SingularMatrixError&) {
      check.expect(false, d_str(d) + " spanning Z failed to factor");
    }
    if (d < 2) continue;
    const Mat deficient = gram(random_vectors(rng, d, d - 1));
    check.expect(rank(deficient, 1e-10) == d - 1, d_str(d) + " n<d Z has wrong rank");
    bool raised = false;
    try {
      cholesky(deficient);
    } catch (const SingularMatrixError&) {
      raised = true;
    }
    check.expect(raised, d_str(d) + " non-spanning Z factored without error");
  }
  check.note("sizes checked " + std::to_string(opt.sizes.size()));
  return check.done();
}

LemmaResult lemma_basis_inverse(const LemmaOptions& opt) {
  Check check("basis_inverse");
  double worst = 0.0;
  for (std::size_t d : opt.sizes) {
    Rng rng(derive_seed(opt.seed, 3, d));
    std::vector<Vec> ys = random_vectors(rng, d, d);
    if (opt.inject_rank_deficiency && d >= 3) ys.back() = add(ys[0], ys[1]);
    const Mat y = Mat::from_columns(ys);
    try {
      const Mat w = inverse(y);  // rows are the dual basis
      const Mat z = gram(ys);
      const Mat z_inv = matmul(transpose(w), w);
      const double err_dual = max_abs(sub(matmul(w, y), Mat::identity(d)));
      const double err_inv = max_abs(sub(matmul(z, z_inv), Mat::identity(d)));
      const double err = std::max(err_dual, err_inv);
      worst = std::max(worst, err);
      check.expect(err <= 1e-9, d_str(d) + " identity error " + format_double(err));
    } catch (const SingularMatrixError& e) {
      check.expect(false, d_str(d) + " basis is rank deficient (rank " + std::to_string(e.rank()) + ")");
    }
  }
  check.note("max error " + format_double(worst));
  return check.done();
}

LemmaResult lemma_orthonormal_identity(const LemmaOptions& opt) {
  Check check("orthonormal_identity");
  double worst = 0.0;
  for (std::size_t d : opt.sizes) {
    const Mat q = random_orthogonal(d, derive_seed(opt.seed, 4, d));
    std::vector<Vec> ys;
    for (std::size_t j = 0; j < d; ++j) ys.push_back(q.column(j));
    const double err = max_abs(sub(gram(ys), Mat::identity(d)));
    worst = std::max(worst, err);
    check.expect(err <= 1e-12, d_str(d) + " |Z - Id| = " + format_double(err));
  }
  check.note("max |Z - Id| " + format_double(worst));
  return check.done();
}

LemmaResult lemma_orthogonal_invariance(const LemmaOptions& opt) {
  Check check("orthogonal_invariance");
  double worst = 0.0;
  for (std::size_t d : opt.sizes) {
    Rng rng(derive_seed(opt.seed, 5, d));
    const Mat p = scale(Mat::identity(d), 1.0 + rng.uniform());
    for (std::uint64_t t = 0; t < 100; ++t) {
      const Mat q = random_orthogonal(d, derive_seed(opt.seed, 50 + t, d));
      const double err = max_abs(sub(matmul(transpose(q), matmul(p, q)), p));
      worst = std::max(worst, err);
      check.expect(err <= 1e-12, d_str(d) + " |QᵀPQ - P| = " + format_double(err));
    }
  }
  check.note("max |QᵀPQ - P| " + format_double(worst));
  return check.done();
}

namespace {

constexpr double kSphericalSigma = 0.5;

Mat spherical_gram(const LemmaOptions& opt) {
  const std::vector<Vec> ys = sample_spherical(opt.spherical_dim, opt.spherical_samples,
                                               kSphericalSigma, derive_seed(opt.seed, 6, 0));
  return gram(ys);
}

}  // namespace

LemmaResult lemma_spherical_concentration(const LemmaOptions& opt) {
  Check check("spherical_concentration");
  const std::size_t d = opt.spherical_dim;
  const double n = static_cast<double>(opt.spherical_samples);
  const double s2 = kSphericalSigma * kSphericalSigma;
  const Mat dev = sub(scale(spherical_gram(opt), 1.0 / n), scale(Mat::identity(d), s2));
  const double err = frobenius(dev);
  const double bound = 0.05 * s2 * std::sqrt(static_cast<double>(d));
  check.expect(err <= bound, "|Z/n - s²Id|_F = " + format_double(err) + " > " + format_double(bound));
  check.note("|Z/n - s²Id|_F " + format_double(err) + " <= " + format_double(bound));
  return check.done();
}

LemmaResult lemma_trace_identity(const LemmaOptions& opt) {
  Check check("trace_identity");
  const double expected = static_cast<double>(opt.spherical_samples) * kSphericalSigma *
                          kSphericalSigma * static_cast<double>(opt.spherical_dim);
  const double rel = std::abs(trace(spherical_gram(opt)) - expected) / expected;
  check.expect(rel <= 0.02, "relative trace error " + format_double(rel));
  check.note("relative trace error " + format_double(rel));
  return check.done();
}

LemmaResult lemma_normal_equations(const LemmaOptions& opt) {
  Check check("normal_equations");
  double worst_res = 0.0, worst_grad = 0.0;
  for (std::size_t d : opt.sizes) {
    Rng rng(derive_seed(opt.seed, 7, d));
    const PatchCollection coll = random_collection(rng, d, 2 * d);
    const GramAccumulator acc = accumulate(coll);
    const ThoughtPatch patch = solve_exact(coll);
    const double res = frobenius(sub(matmul(patch.delta_mat, acc.z()), acc.b())) / frobenius(acc.b());
    const double grad = patch.grad_norm / (2.0 * frobenius(acc.b()));
    worst_res = std::max(worst_res, res);
    worst_grad = std::max(worst_grad, grad);
    check.expect(res <= 1e-10, d_str(d) + " residual " + format_double(res));
    check.expect(grad <= 1e-8, d_str(d) + " gradient " + format_double(grad));
  }
  check.note("residual " + format_double(worst_res) + ", gradient " + format_double(worst_grad));
  return check.done();
}

LemmaResult lemma_gradient(const LemmaOptions& opt) {
  Check check("gradient_finite_difference");
  constexpr std::size_t d = 6, n = 10;
  constexpr double h = 1e-6;
  Rng rng(derive_seed(opt.seed, 8, d));
  const PatchCollection coll = random_collection(rng, d, n);
  const Mat m = random_normal_mat(rng, d, d);
  const Mat g = grad_loss(m, coll);
  double worst = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      Mat plus = m, minus = m;
      plus(i, j) += h;
      minus(i, j) -= h;
      const double fd = (loss(plus, coll) - loss(minus, coll)) / (2.0 * h);
      worst = std::max(worst, std::abs(fd - g(i, j)));
    }
  }
  check.expect(worst <= 1e-6, "max |fd - grad| = " + format_double(worst));
  check.note("max |fd - grad| " + format_double(worst));
  return check.done();
}

LemmaResult lemma_nonuniqueness(const LemmaOptions& opt) {
  Check check("nonuniqueness");
  for (std::size_t d : opt.sizes) {
    if (d < 2) continue;
    Rng rng(derive_seed(opt.seed, 9, d));
    const PatchCollection sparse = random_collection(rng, d, d / 2);
    const NonUniqueness nu = demonstrate_nonuniqueness(sparse, derive_seed(opt.seed, 10, d));
    const double scale_ = 1.0 + loss(nu.first, sparse);
    check.expect(nu.loss_gap <= 1e-9 * scale_, d_str(d) + " loss gap " + format_double(nu.loss_gap));
    check.expect(nu.matrix_gap >= 0.1, d_str(d) + " minimizers coincide");
    const PatchCollection spanning = random_collection(rng, d, d);
    bool raised = false;
    try {
      demonstrate_nonuniqueness(spanning, 0);
    } catch (const NumericalError&) {
      raised = true;
    }
    check.expect(raised, d_str(d) + " construction succeeded on a spanning set");
  }
  check.note("sizes checked " + std::to_string(opt.sizes.size()));
  return check.done();
}

std::vector<LemmaResult> run_lemmas(const LemmaOptions& options) {
  if (options.sizes.empty()) throw InputError("lemma-check: no sizes given");
  for (std::size_t d : options.sizes)
    if (d == 0) throw InputError("lemma-check: sizes must be positive");
  if (options.spherical_dim == 0 || options.spherical_samples == 0)
    throw InputError("lemma-check: spherical sample size must be positive");
  return {lemma_rank_bound(options),
          lemma_span_iff_invertible(options),
          lemma_basis_inverse(options),
          lemma_orthonormal_identity(options),
          lemma_orthogonal_invariance(options),
          lemma_spherical_concentration(options),
          lemma_trace_identity(options),
          lemma_normal_equations(options),
          lemma_gradient(options),
          lemma_nonuniqueness(options)};
}

}  // namespace tpatch
