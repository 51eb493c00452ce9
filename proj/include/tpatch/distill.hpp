// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0
//
// Token-independent thought patches distilled from collections of token
// patches (delta_i, a_i):
//
//   thought vector   mean(delta_i)
//   thought matrix   argmin_M Σ |M a_i - delta_i|²  =  (Σ delta_i a_iᵀ) Z⁻¹,  Z = Σ a_i a_iᵀ
//
// plus the lambda-scaled rank-one-sum approximation and its second-order
// correction for singular or expensive Z.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tpatch/linalg.hpp"

namespace tpatch {

struct PatchCollection {
  std::size_t layer = 0;
  std::vector<Vec> deltas;
  std::vector<Vec> attns;
  std::vector<std::string> provenance;

  /// Appends a pair; throws on width mismatch or a zero-norm attention vector.
  void add(Vec delta, Vec a, std::string origin = {});
  std::size_t size() const { return deltas.size(); }
  bool empty() const { return deltas.empty(); }
  std::size_t width() const { return deltas.empty() ? 0 : deltas.front().size(); }
};

enum class SolverKind { exact, ridge, rank_one_sum, corrected };

struct SolverSpec {
  SolverKind kind = SolverKind::exact;
  double param = 0.0;  // ridge epsilon or lambda
  bool attn_norm = false;

  std::string to_string() const;
  static SolverSpec parse(const std::string& text);
  bool operator==(const SolverSpec&) const = default;
};

struct ZDiagnostics {
  std::size_t rank = 0;
  double trace = 0.0;
  double min_pivot = 0.0;
  double max_pivot = 0.0;
  /// |Z - (tr Z / d) Id|_F / tr Z; near zero in the spherical regime.
  double isotropy = 0.0;
};

/// How a layer's matrix is folded into W_in.
enum class MatrixApplication {
  additive,        // W_in + M, M has W_in's shape
  multiplicative,  // W_in (Id + M), M is d_model x d_model
};

std::string to_string(MatrixApplication m);
MatrixApplication parse_matrix_application(const std::string& s);

struct ThoughtPatch {
  std::size_t layer = 0;
  Vec delta_vec;
  Mat delta_mat;
  MatrixApplication application = MatrixApplication::multiplicative;
  SolverSpec solver;
  ZDiagnostics z;
  double loss = 0.0;
  double grad_norm = 0.0;
  bool operator==(const ThoughtPatch& o) const {
    return layer == o.layer && delta_vec == o.delta_vec && delta_mat == o.delta_mat &&
           application == o.application && solver == o.solver && loss == o.loss &&
           grad_norm == o.grad_norm;
  }
};

struct PatchBundle {
  std::string model_fingerprint;
  std::map<std::size_t, ThoughtPatch> layers;
  /// Canonical JSON of the producing configuration.
  std::string config_json = "{}";
  bool operator==(const PatchBundle& o) const {
    return model_fingerprint == o.model_fingerprint && layers == o.layers &&
           config_json == o.config_json;
  }
};

Vec mean_thought_vector(const PatchCollection& coll);

/// Σ |M a_i - delta_i|², using Delta_i a_i = delta_i.
double loss(const Mat& m, const PatchCollection& coll);
/// 2 Σ (M a_i - delta_i) a_iᵀ.
Mat grad_loss(const Mat& m, const PatchCollection& coll);

GramAccumulator accumulate(const PatchCollection& coll);

/// (Σ delta_i a_iᵀ)(Z + ridge Id)⁻¹ via a Cholesky solve. With ridge == 0 a
/// singular Z raises SingularMatrixError. The vector part is the mean delta.
ThoughtPatch solve_exact(const PatchCollection& coll, double ridge = 0.0);

/// Minimum-norm minimizer B Z⁺, computed on an orthonormal basis of span(a).
/// Agrees with solve_exact when Z is invertible and stays defined when it is not.
Mat solve_min_norm(const PatchCollection& coll);

/// lambda Σ delta_i a_iᵀ, each term divided by |a_i| when attn_norm is set.
Mat solve_rank_one_sum(const PatchCollection& coll, double lambda, bool attn_norm = false);

/// lambda B - lambda² B Z, the two-term expansion of B (Z + Id / lambda)⁻¹.
Mat solve_corrected(const PatchCollection& coll, double lambda);

/// d / tr(Z), the data-driven estimate of 1 / (sigma² n).
double default_lambda(const PatchCollection& coll);

struct NonUniqueness {
  Mat first;
  Mat second;
  double loss_gap = 0.0;    // |L(first) - L(second)|
  double matrix_gap = 0.0;  // |first - second|_F
};

/// Two distinct minimizers when the a_i span a strict subspace: a minimizer M
/// with a non-trivial action on span(a)⊥, and M composed with the reflection
/// that fixes span(a) and negates its complement. Throws NumericalError if the
/// a_i span the whole space.
NonUniqueness demonstrate_nonuniqueness(const PatchCollection& coll, std::uint64_t seed = 0,
                                        double min_gap = 0.1);

ZDiagnostics z_diagnostics(const PatchCollection& coll);
ZDiagnostics z_diagnostics(const Mat& z);

}  // namespace tpatch
