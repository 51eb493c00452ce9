// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0
//
// Thought-patch extraction from a dataset of demonstrations. For every example
// e and layer l in [lo, hi) the token patches of the instruction-prefixed
// prompt [I, e] are accumulated as
//
//   dW_l += c1 / n · Σ_i delta_i a_iᵀ      (each term / |a_i| with attn_norm)
//   db_l += c2 / n · Σ_i delta_i
//
// and finalized by the number of examples consumed or by a fixed divisor K.

#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "tpatch/distill.hpp"
#include "tpatch/errors.hpp"
#include "tpatch/model.hpp"

namespace tpatch {

struct Schedule {
  enum class Kind { average, fixed };
  Kind kind = Kind::average;
  double divisor = 0.0;  // K for fixed

  /// "avg" or "fixed:K".
  std::string to_string() const;
  static Schedule parse(const std::string& text);
  static Schedule average() { return {}; }
  static Schedule fixed(double k) { return {Kind::fixed, k}; }
  bool operator==(const Schedule&) const = default;
};

enum class SolverMode {
  alg1_rank_one,  // the accumulation above
  exact,          // c1 · (Σ delta aᵀ) (Z + ridge Id)⁻¹ over the pooled patches
  corrected,      // c1 · (lambda B - lambda² B Z); lambda = 0 picks d / tr Z
};

struct ExtractConfig {
  std::vector<TokenId> instruction;
  std::size_t layer_lo = 0;
  std::size_t layer_hi = 1;  // exclusive
  std::size_t steps = 300;
  double c1 = 0.015;
  double c2 = 0.0;
  Schedule schedule;
  bool attn_norm = false;
  SolverMode solver_mode = SolverMode::alg1_rank_one;
  double solver_param = 0.0;  // ridge for exact, lambda for corrected
  MatrixApplication application = MatrixApplication::additive;
  /// Abort on a degenerate attention output instead of skipping the position.
  bool strict = false;

  void validate(const ModelConfig& model) const;
  nlohmann::json to_json() const;
  static ExtractConfig from_json(const nlohmann::json& j);
};

/// "alg1", "exact", "exact:EPS", "corrected" or "corrected:LAMBDA".
std::string solver_mode_to_string(SolverMode mode, double param);
void parse_solver_mode(const std::string& text, SolverMode& mode, double& param);

/// "lo:hi".
std::string layers_to_string(std::size_t lo, std::size_t hi);
void parse_layers(const std::string& text, std::size_t& lo, std::size_t& hi);

struct Example {
  std::vector<TokenId> tokens;
};

struct ExtractionRecord {
  std::size_t step = 0;  // examples consumed so far, from 1
  std::size_t layer = 0;
  double norm_delta_b = 0.0;  // of the finalized vector as of this step
  double fro_delta_W = 0.0;   // of the finalized matrix as of this step
  double effective_c1 = 0.0;
  std::size_t tokens_consumed = 0;
};

struct SkippedPosition {
  std::size_t step = 0;
  std::size_t layer = 0;
  std::size_t position = 0;
};

struct ExtractionLog {
  double c1 = 0.0;
  Schedule schedule;
  std::size_t steps_consumed = 0;
  std::vector<ExtractionRecord> records;
  std::vector<SkippedPosition> skipped;
};

struct ExtractResult {
  PatchBundle bundle;
  ExtractionLog log;
};

/// Throws InputError for an empty effective dataset and, in strict mode,
/// DegenerateAttentionError naming the first degenerate position.
ExtractResult run_algorithm1(const ToyTransformer& model, const std::vector<Example>& dataset,
                             const ExtractConfig& cfg);

/// Pooled (delta, a) pairs of the first cfg.steps examples per layer, with
/// degenerate positions dropped (or raised in strict mode).
std::map<std::size_t, PatchCollection> collect_patches(const ToyTransformer& model,
                                                       const std::vector<Example>& dataset,
                                                       const ExtractConfig& cfg);

/// c1 · step / K under a fixed divisor, c1 under averaging.
double effective_constant(const ExtractionLog& log, std::size_t step);

class FingerprintMismatchError : public InputError {
 public:
  using InputError::InputError;
};

/// New model with W_in + dW (additive) or W_in (Id + dW) (multiplicative) and
/// b_out + db on every bundle layer. Refuses a bundle made for another model.
ToyTransformer apply_bundle(const ToyTransformer& model, const PatchBundle& bundle,
                            bool check_fingerprint = true);

/// Rewrites multiplicative layers as the equivalent additive dW = W_in · M.
PatchBundle to_additive(const PatchBundle& bundle, const ToyTransformer& model);

/// Every matrix and vector multiplied by s.
PatchBundle scale_bundle(const PatchBundle& bundle, double s);

/// Bundle for `model` holding the given patches.
PatchBundle make_bundle(const ToyTransformer& model, std::vector<ThoughtPatch> patches,
                        const nlohmann::json& config = nlohmann::json::object());

}  // namespace tpatch
