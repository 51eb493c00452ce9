// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0
//
// How closely patched reduced-context runs track the full-context model:
// per-block relative activation error over the retained positions, total
// variation between next-token distributions at the last position, and
// greedy-token agreement.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tpatch/distill.hpp"
#include "tpatch/extract.hpp"
#include "tpatch/io.hpp"
#include "tpatch/model.hpp"
#include "tpatch/token_patch.hpp"

namespace tpatch {

enum class Variant { full_context, unpatched_reduced, token_patched, thought_patched };

std::string to_string(Variant v);

struct VariantResult {
  std::size_t prompt_id = 0;
  Variant variant = Variant::full_context;
  std::vector<double> layer_rel_err;  // one per block
  double output_rel_err = 0.0;        // of the logits
  double tv_distance = 0.0;
  bool argmax_agree = true;
};

struct EvalReport {
  std::vector<VariantResult> results;  // ordered by (prompt, variant)

  /// Mean over prompts of the given variant's tv distance.
  double mean_tv(Variant v) const;
  /// Mean over prompts and blocks of the relative activation error.
  double mean_act_err(Variant v) const;
  double agree_rate(Variant v) const;
  std::vector<const VariantResult*> of(Variant v) const;
};

/// ½ Σ |p - q|.
double total_variation(std::span<const double> p, std::span<const double> q);

/// |x - ref|_F / |ref|_F over the listed activations (0 when both are zero).
double relative_error(std::span<const Vec> x, std::span<const Vec> ref);

/// Runs all four variants on every prompt.
EvalReport evaluate(const ToyTransformer& model, const PatchBundle& bundle,
                    const std::vector<PromptSplit>& prompts);

/// Same, with the thought-patched model given directly.
EvalReport evaluate_with(const ToyTransformer& model, const ToyTransformer& patched,
                         const std::vector<PromptSplit>& prompts);

/// [instruction, example] splits for up to `limit` examples.
std::vector<PromptSplit> make_prompts(const std::vector<TokenId>& instruction,
                                      const std::vector<Example>& examples,
                                      std::size_t limit = static_cast<std::size_t>(-1));

enum class SweepParam { c1, c2, lambda };

std::string to_string(SweepParam p);
SweepParam parse_sweep_param(const std::string& s);

struct SweepPoint {
  double value = 0.0;
  double mean_tv = 0.0;
  double mean_act_err = 0.0;
  double agree_rate = 0.0;
};

struct SweepResult {
  SweepParam param = SweepParam::c1;
  std::vector<SweepPoint> points;
};

/// Re-extracts with each grid value substituted into base_cfg and evaluates the
/// thought-patched model on the held-out prompts. A lambda sweep uses the
/// corrected solver with lambda = value (lambda = 0 gives a zero matrix).
SweepResult sweep(const ToyTransformer& model, const std::vector<Example>& dataset,
                  const ExtractConfig& base_cfg, SweepParam param, const std::vector<double>& grid,
                  const std::vector<PromptSplit>& held_out);

io::CsvTable report_table(const EvalReport& report, const io::Provenance& prov);
io::CsvTable sweep_table(const SweepResult& result, const io::Provenance& prov);

inline const std::vector<std::string> kReportColumns = {
    "prompt_id", "variant", "layer", "activation_rel_err", "tv_distance", "argmax_agree"};
inline const std::vector<std::string> kSweepColumns = {"param_name", "param_value", "mean_tv",
                                                       "mean_act_err", "agree_rate"};

}  // namespace tpatch
