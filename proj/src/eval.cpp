// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpatch/eval.hpp"

#include <cmath>

#include "tpatch/errors.hpp"
#include "tpatch/format.hpp"

namespace tpatch {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full_context:
      return "full_context";
    case Variant::unpatched_reduced:
      return "unpatched_reduced";
    case Variant::token_patched:
      return "token_patched";
    case Variant::thought_patched:
      return "thought_patched";
  }
  return "?";
}

std::vector<const VariantResult*> EvalReport::of(Variant v) const {
  std::vector<const VariantResult*> out;
  for (const VariantResult& r : results)
    if (r.variant == v) out.push_back(&r);
  return out;
}

double EvalReport::mean_tv(Variant v) const {
  const auto rs = of(v);
  if (rs.empty()) return 0.0;
  double total = 0.0;
  for (const VariantResult* r : rs) total += r->tv_distance;
  return total / static_cast<double>(rs.size());
}

double EvalReport::mean_act_err(Variant v) const {
  double total = 0.0;
  std::size_t count = 0;
  for (const VariantResult* r : of(v)) {
    for (double e : r->layer_rel_err) total += e;
    count += r->layer_rel_err.size();
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

double EvalReport::agree_rate(Variant v) const {
  const auto rs = of(v);
  if (rs.empty()) return 0.0;
  std::size_t agree = 0;
  for (const VariantResult* r : rs) agree += r->argmax_agree ? 1 : 0;
  return static_cast<double>(agree) / static_cast<double>(rs.size());
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("total_variation: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

double relative_error(std::span<const Vec> x, std::span<const Vec> ref) {
  if (x.size() != ref.size()) throw DimensionError("relative_error: length mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].size() != ref[i].size()) throw DimensionError("relative_error: width mismatch");
    for (std::size_t k = 0; k < x[i].size(); ++k) {
      const double diff = x[i][k] - ref[i][k];
      num += diff * diff;
      den += ref[i][k] * ref[i][k];
    }
  }
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num / den);
}

namespace {

VariantResult compare(std::size_t prompt_id, Variant variant, const ActivationTrace& run,
                      const ActivationTrace& full, std::size_t chunk_len) {
  VariantResult r;
  r.prompt_id = prompt_id;
  r.variant = variant;
  for (std::size_t b = 0; b < full.blocks.size(); ++b) {
    const std::span<const Vec> ref = std::span(full.blocks[b].output).subspan(chunk_len);
    r.layer_rel_err.push_back(relative_error(run.blocks[b].output, ref));
  }
  r.output_rel_err = relative_error(run.logits, std::span(full.logits).subspan(chunk_len));
  const Vec p = softmax(run.logits.back());
  const Vec q = softmax(full.logits.back());
  r.tv_distance = total_variation(p, q);
  r.argmax_agree = argmax(run.logits.back()) == argmax(full.logits.back());
  return r;
}

}  // namespace

EvalReport evaluate_with(const ToyTransformer& model, const ToyTransformer& patched,
                         const std::vector<PromptSplit>& prompts) {
  std::vector<std::vector<VariantResult>> per_prompt(prompts.size());
  std::vector<std::exception_ptr> errors(prompts.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t is = 0; is < static_cast<std::ptrdiff_t>(prompts.size()); ++is) {
    const auto i = static_cast<std::size_t>(is);
    try {
      const PromptSplit& split = prompts[i];
      split.validate();
      const ActivationTrace full = forward_full(model, split.full);
      ActivationTrace full_slice;  // the full-context run restricted to retained positions
      full_slice.input = {full.input.begin() + split.chunk_len, full.input.end()};
      for (const BlockTrace& bt : full.blocks) {
        BlockTrace slice;
        slice.output = {bt.output.begin() + split.chunk_len, bt.output.end()};
        full_slice.blocks.push_back(std::move(slice));
      }
      full_slice.logits = {full.logits.begin() + split.chunk_len, full.logits.end()};

      auto& out = per_prompt[i];
      out.push_back(compare(i, Variant::full_context, full_slice, full, split.chunk_len));
      out.push_back(compare(i, Variant::unpatched_reduced,
                            forward_embedded(model, reduced_inputs(model, split)), full,
                            split.chunk_len));
      out.push_back(
          compare(i, Variant::token_patched, patched_forward(model, split), full, split.chunk_len));
      out.push_back(compare(i, Variant::thought_patched,
                            forward_embedded(patched, reduced_inputs(patched, split)), full,
                            split.chunk_len));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);
  EvalReport report;
  for (auto& rs : per_prompt)
    for (auto& r : rs) report.results.push_back(std::move(r));
  return report;
}

EvalReport evaluate(const ToyTransformer& model, const PatchBundle& bundle,
                    const std::vector<PromptSplit>& prompts) {
  return evaluate_with(model, apply_bundle(model, bundle), prompts);
}

std::vector<PromptSplit> make_prompts(const std::vector<TokenId>& instruction,
                                      const std::vector<Example>& examples, std::size_t limit) {
  std::vector<PromptSplit> out;
  for (std::size_t i = 0; i < examples.size() && i < limit; ++i)
    out.push_back(PromptSplit::from_parts(instruction, examples[i].tokens));
  return out;
}

std::string to_string(SweepParam p) {
  switch (p) {
    case SweepParam::c1:
      return "c1";
    case SweepParam::c2:
      return "c2";
    case SweepParam::lambda:
      return "lambda";
  }
  return "?";
}

SweepParam parse_sweep_param(const std::string& s) {
  if (s == "c1") return SweepParam::c1;
  if (s == "c2") return SweepParam::c2;
  if (s == "lambda") return SweepParam::lambda;
  throw InputError("unknown sweep parameter '" + s + "' (expected c1, c2 or lambda)");
}

SweepResult sweep(const ToyTransformer& model, const std::vector<Example>& dataset,
                  const ExtractConfig& base_cfg, SweepParam param, const std::vector<double>& grid,
                  const std::vector<PromptSplit>& held_out) {
  if (grid.empty()) throw InputError("sweep: empty grid");
  SweepResult result;
  result.param = param;
  for (double value : grid) {
    if (!std::isfinite(value)) throw InputError("sweep: grid values must be finite");
    ExtractConfig cfg = base_cfg;
    switch (param) {
      case SweepParam::c1:
        cfg.c1 = value;
        break;
      case SweepParam::c2:
        cfg.c2 = value;
        break;
      case SweepParam::lambda:
        if (value < 0.0) throw InputError("sweep: lambda must be non-negative");
        cfg.solver_mode = SolverMode::corrected;
        // lambda = 0 means "no matrix", not the data-driven default.
        if (value == 0.0) cfg.c1 = 0.0;
        cfg.solver_param = value;
        break;
    }
    const ExtractResult extracted = run_algorithm1(model, dataset, cfg);
    const EvalReport report = evaluate(model, extracted.bundle, held_out);
    result.points.push_back({value, report.mean_tv(Variant::thought_patched),
                             report.mean_act_err(Variant::thought_patched),
                             report.agree_rate(Variant::thought_patched)});
  }
  return result;
}

io::CsvTable report_table(const EvalReport& report, const io::Provenance& prov) {
  io::CsvTable table;
  table.preamble = io::provenance_preamble(prov);
  table.header = kReportColumns;
  for (const VariantResult& r : report.results) {
    const std::string id = std::to_string(r.prompt_id);
    const std::string variant = to_string(r.variant);
    for (std::size_t b = 0; b < r.layer_rel_err.size(); ++b)
      table.rows.push_back({id, variant, std::to_string(b), format_double(r.layer_rel_err[b]), "", ""});
    table.rows.push_back({id, variant, "-1", format_double(r.output_rel_err),
                          format_double(r.tv_distance), r.argmax_agree ? "true" : "false"});
  }
  return table;
}

io::CsvTable sweep_table(const SweepResult& result, const io::Provenance& prov) {
  io::CsvTable table;
  table.preamble = io::provenance_preamble(prov);
  table.header = kSweepColumns;
  for (const SweepPoint& p : result.points) {
    table.rows.push_back({to_string(result.param), format_double(p.value), format_double(p.mean_tv),
                          format_double(p.mean_act_err), format_double(p.agree_rate)});
  }
  return table;
}

}  // namespace tpatch
