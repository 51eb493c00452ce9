// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpatch/distill.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "tpatch/errors.hpp"
#include "tpatch/format.hpp"
#include "tpatch/kernels.hpp"

namespace tpatch {

void PatchCollection::add(Vec delta, Vec a, std::string origin) {
  if (delta.size() != a.size()) throw DimensionError("patch collection: delta/a width mismatch");
  if (!empty() && a.size() != width()) throw DimensionError("patch collection: width mismatch");
  if (!(norm(a) > 0.0)) throw NumericalError("patch collection: zero attention vector");
  deltas.push_back(std::move(delta));
  attns.push_back(std::move(a));
  provenance.push_back(std::move(origin));
}

std::string SolverSpec::to_string() const {
  std::string s;
  switch (kind) {
    case SolverKind::exact:
      return "exact";
    case SolverKind::ridge:
      s = "ridge:" + format_double(param);
      break;
    case SolverKind::rank_one_sum:
      s = "rank_one_sum:" + format_double(param);
      break;
    case SolverKind::corrected:
      s = "corrected:" + format_double(param);
      break;
  }
  if (attn_norm) s += ":attn_norm";
  return s;
}

SolverSpec SolverSpec::parse(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
  if (parts.empty()) throw InputError("empty solver spec");
  SolverSpec spec;
  if (parts.back() == "attn_norm") {
    spec.attn_norm = true;
    parts.pop_back();
  }
  const std::string& name = parts[0];
  if (name == "exact" && parts.size() == 1) {
    spec.kind = SolverKind::exact;
  } else if (parts.size() == 2 && (name == "ridge" || name == "rank_one_sum" || name == "corrected")) {
    spec.kind = name == "ridge"          ? SolverKind::ridge
                : name == "rank_one_sum" ? SolverKind::rank_one_sum
                                         : SolverKind::corrected;
    spec.param = parse_double(parts[1]);
  } else {
    throw InputError("bad solver spec '" + text + "'");
  }
  return spec;
}

std::string to_string(MatrixApplication m) {
  return m == MatrixApplication::additive ? "additive" : "multiplicative";
}

MatrixApplication parse_matrix_application(const std::string& s) {
  if (s == "additive") return MatrixApplication::additive;
  if (s == "multiplicative") return MatrixApplication::multiplicative;
  throw InputError("unknown matrix application '" + s + "' (expected additive or multiplicative)");
}

namespace {

void require_nonempty(const PatchCollection& coll, const char* op) {
  if (coll.empty()) throw InputError(std::string(op) + ": empty patch collection");
}

void require_conforming(const Mat& m, const PatchCollection& coll) {
  const std::size_t d = coll.width();
  if (m.rows() != d || m.cols() != d) throw DimensionError("matrix does not match collection width");
}

}  // namespace

Vec mean_thought_vector(const PatchCollection& coll) {
  require_nonempty(coll, "mean_thought_vector");
  Vec mean(coll.width(), 0.0);
  for (const Vec& delta : coll.deltas)
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += delta[i];
  const double inv = 1.0 / static_cast<double>(coll.size());
  for (double& x : mean) x *= inv;
  return mean;
}

double loss(const Mat& m, const PatchCollection& coll) {
  require_conforming(m, coll);
  double total = 0.0;
  for (std::size_t k = 0; k < coll.size(); ++k) {
    const Vec r = sub(matvec(m, coll.attns[k]), coll.deltas[k]);
    total += dot(r, r);
  }
  return total;
}

Mat grad_loss(const Mat& m, const PatchCollection& coll) {
  require_conforming(m, coll);
  const std::size_t d = coll.width();
  std::vector<Vec> residuals;
  residuals.reserve(coll.size());
  for (std::size_t k = 0; k < coll.size(); ++k) {
    Vec r = sub(matvec(m, coll.attns[k]), coll.deltas[k]);
    for (double& x : r) x *= 2.0;
    residuals.push_back(std::move(r));
  }
  Mat unused(d, d), grad(d, d);
  kernels::gram_update(residuals, coll.attns, unused, grad);
  return grad;
}

GramAccumulator accumulate(const PatchCollection& coll) {
  require_nonempty(coll, "accumulate");
  GramAccumulator acc(coll.width());
  acc.add_batch(coll.deltas, coll.attns);
  return acc;
}

ZDiagnostics z_diagnostics(const Mat& z) {
  ZDiagnostics diag;
  const std::size_t d = z.rows();
  diag.rank = rank(z, 1e-10);
  diag.trace = trace(z);
  const Vec pivots = psd_pivots(z);
  if (!pivots.empty()) {
    diag.min_pivot = pivots.front();
    diag.max_pivot = pivots.front();
    for (double p : pivots) {
      diag.min_pivot = std::min(diag.min_pivot, p);
      diag.max_pivot = std::max(diag.max_pivot, p);
    }
  }
  if (diag.trace > 0.0) {
    Mat dev = z;
    const double mean_diag = diag.trace / static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) dev(i, i) -= mean_diag;
    diag.isotropy = frobenius(dev) / diag.trace;
  }
  return diag;
}

ZDiagnostics z_diagnostics(const PatchCollection& coll) {
  return z_diagnostics(accumulate(coll).z());
}

ThoughtPatch solve_exact(const PatchCollection& coll, double ridge) {
  require_nonempty(coll, "solve_exact");
  if (ridge < 0.0) throw InputError("solve_exact: ridge must be non-negative");
  const GramAccumulator acc = accumulate(coll);
  ThoughtPatch patch;
  patch.layer = coll.layer;
  patch.delta_mat = solve_right(acc.b(), acc.z(), ridge);
  patch.delta_vec = mean_thought_vector(coll);
  patch.application = MatrixApplication::multiplicative;
  patch.solver = ridge == 0.0 ? SolverSpec{SolverKind::exact, 0.0, false}
                              : SolverSpec{SolverKind::ridge, ridge, false};
  patch.z = z_diagnostics(acc.z());
  patch.loss = loss(patch.delta_mat, coll);
  patch.grad_norm = frobenius(grad_loss(patch.delta_mat, coll));
  return patch;
}

Mat solve_rank_one_sum(const PatchCollection& coll, double lambda, bool attn_norm) {
  require_nonempty(coll, "solve_rank_one_sum");
  const std::size_t d = coll.width();
  Mat unused(d, d), sum(d, d);
  if (attn_norm) {
    std::vector<Vec> scaled;
    scaled.reserve(coll.size());
    for (std::size_t k = 0; k < coll.size(); ++k)
      scaled.push_back(scale(coll.deltas[k], 1.0 / norm(coll.attns[k])));
    kernels::gram_update(scaled, coll.attns, unused, sum);
  } else {
    kernels::gram_update(coll.deltas, coll.attns, unused, sum);
  }
  return scale(sum, lambda);
}

Mat solve_corrected(const PatchCollection& coll, double lambda) {
  const GramAccumulator acc = accumulate(coll);
  const Mat bz = matmul(acc.b(), acc.z());
  return sub(scale(acc.b(), lambda), scale(bz, lambda * lambda));
}

double default_lambda(const PatchCollection& coll) {
  const GramAccumulator acc = accumulate(coll);
  const double tr = trace(acc.z());
  if (!(tr > 0.0)) throw NumericalError("default_lambda: Gram matrix has zero trace");
  return static_cast<double>(acc.dim()) / tr;
}

Mat solve_min_norm(const PatchCollection& coll) {
  require_nonempty(coll, "solve_min_norm");
  const std::vector<Vec> basis = orthonormal_basis(coll.attns, 1e-10);
  const GramAccumulator acc = accumulate(coll);
  // B Z⁺ = (B U)(Uᵀ Z U)⁻¹ Uᵀ for an orthonormal basis U of span(a).
  const Mat u = Mat::from_columns(basis);
  const Mat ut = transpose(u);
  const Mat reduced_z = matmul(ut, matmul(acc.z(), u));
  return matmul(solve_right(matmul(acc.b(), u), reduced_z, 0.0), ut);
}

NonUniqueness demonstrate_nonuniqueness(const PatchCollection& coll, std::uint64_t seed,
                                        double min_gap) {
  require_nonempty(coll, "demonstrate_nonuniqueness");
  const std::size_t d = coll.width();
  const std::vector<Vec> basis = orthonormal_basis(coll.attns, 1e-10);
  if (basis.size() >= d)
    throw NumericalError("the attention vectors span the space; the minimizer is unique");

  const Mat u = Mat::from_columns(basis);
  const Mat ut = transpose(u);
  const Mat min_norm = solve_min_norm(coll);

  Mat complement = Mat::identity(d);
  const Mat projector = matmul(u, ut);
  complement = sub(complement, projector);

  // Any matrix acting only on span(a)⊥ leaves the loss unchanged.
  Rng rng(seed);
  Mat kick = matmul(random_normal_mat(rng, d, d), complement);
  kick = scale(kick, min_gap / frobenius(kick));

  NonUniqueness out;
  out.first = add(min_norm, kick);
  const Mat reflection = sub(scale(projector, 2.0), Mat::identity(d));
  out.second = matmul(out.first, reflection);
  out.loss_gap = std::abs(loss(out.first, coll) - loss(out.second, coll));
  out.matrix_gap = frobenius(sub(out.first, out.second));
  return out;
}

}  // namespace tpatch
