// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpatch/extract.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <sstream>

#include "tpatch/format.hpp"
#include "tpatch/io.hpp"
#include "tpatch/token_patch.hpp"

namespace tpatch {

using nlohmann::json;

std::string Schedule::to_string() const {
  return kind == Kind::average ? "avg" : "fixed:" + format_double(divisor);
}

Schedule Schedule::parse(const std::string& text) {
  if (text == "avg" || text == "average") return average();
  if (text.rfind("fixed:", 0) == 0) {
    const double k = parse_double(text.substr(6));
    if (!(k > 0.0)) throw InputError("schedule: fixed divisor must be positive");
    return fixed(k);
  }
  throw InputError("bad schedule '" + text + "' (expected avg or fixed:K)");
}

std::string solver_mode_to_string(SolverMode mode, double param) {
  switch (mode) {
    case SolverMode::alg1_rank_one:
      return "alg1";
    case SolverMode::exact:
      return param == 0.0 ? "exact" : "exact:" + format_double(param);
    case SolverMode::corrected:
      return param == 0.0 ? "corrected" : "corrected:" + format_double(param);
  }
  return "alg1";
}

void parse_solver_mode(const std::string& text, SolverMode& mode, double& param) {
  const auto colon = text.find(':');
  const std::string name = text.substr(0, colon);
  param = colon == std::string::npos ? 0.0 : parse_double(text.substr(colon + 1));
  if (name == "alg1" && colon == std::string::npos) {
    mode = SolverMode::alg1_rank_one;
  } else if (name == "exact") {
    mode = SolverMode::exact;
  } else if (name == "corrected") {
    mode = SolverMode::corrected;
  } else {
    throw InputError("bad solver mode '" + text + "' (expected alg1, exact[:EPS] or corrected[:LAMBDA])");
  }
  if (param < 0.0) throw InputError("solver mode parameter must be non-negative");
}

std::string layers_to_string(std::size_t lo, std::size_t hi) {
  return std::to_string(lo) + ":" + std::to_string(hi);
}

void parse_layers(const std::string& text, std::size_t& lo, std::size_t& hi) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw InputError("layers must be given as lo:hi");
  lo = parse_unsigned(text.substr(0, colon));
  hi = parse_unsigned(text.substr(colon + 1));
  if (lo >= hi) throw InputError("layers lo:hi need lo < hi, got " + text);
}

void ExtractConfig::validate(const ModelConfig& model) const {
  if (instruction.empty()) throw InputError("extract: instruction is empty");
  check_tokens(model, instruction);
  if (!(layer_lo < layer_hi && layer_hi <= model.n_blocks)) {
    std::ostringstream msg;
    msg << "extract: layers " << layers_to_string(layer_lo, layer_hi)
        << " must satisfy 0 <= lo < hi <= " << model.n_blocks;
    throw InputError(msg.str());
  }
  if (schedule.kind == Schedule::Kind::fixed && !(schedule.divisor > 0.0))
    throw InputError("extract: fixed divisor must be positive");
  if (!std::isfinite(c1) || !std::isfinite(c2)) throw InputError("extract: c1 and c2 must be finite");
  if (solver_param < 0.0) throw InputError("extract: solver parameter must be non-negative");
  if (solver_mode == SolverMode::alg1_rank_one && application == MatrixApplication::additive &&
      model.d_ff != model.d_model) {
    std::ostringstream msg;
    msg << "extract: the rank-one accumulation yields a " << model.d_model << "x" << model.d_model
        << " matrix that cannot be added to W_in (" << model.d_ff << "x" << model.d_model
        << "); use the multiplicative application or d_ff == d_model";
    throw DimensionError(msg.str());
  }
}

json ExtractConfig::to_json() const {
  return json{{"instruction", instruction},
              {"layers", layers_to_string(layer_lo, layer_hi)},
              {"steps", steps},
              {"c1", c1},
              {"c2", c2},
              {"schedule", schedule.to_string()},
              {"attn_norm", attn_norm},
              {"solver", solver_mode_to_string(solver_mode, solver_param)},
              {"application", tpatch::to_string(application)},
              {"strict", strict}};
}

ExtractConfig ExtractConfig::from_json(const json& j) {
  try {
    ExtractConfig c;
    if (!j.is_object()) throw InputError("extract config must be a JSON object");
    c.instruction = j.value("instruction", c.instruction);
    if (j.contains("layers")) parse_layers(j.at("layers").get<std::string>(), c.layer_lo, c.layer_hi);
    c.steps = j.value("steps", c.steps);
    c.c1 = j.value("c1", c.c1);
    c.c2 = j.value("c2", c.c2);
    if (j.contains("schedule")) c.schedule = Schedule::parse(j.at("schedule").get<std::string>());
    c.attn_norm = j.value("attn_norm", c.attn_norm);
    if (j.contains("solver"))
      parse_solver_mode(j.at("solver").get<std::string>(), c.solver_mode, c.solver_param);
    if (j.contains("application"))
      c.application = parse_matrix_application(j.at("application").get<std::string>());
    c.strict = j.value("strict", c.strict);
    return c;
  } catch (const json::exception& e) {
    throw InputError(std::string("extract config: ") + e.what());
  }
}

namespace {

// One example's patches and rank-one sums for one layer.
struct LayerContribution {
  Mat dw;
  Vec db;
  std::size_t n = 0;
  std::vector<std::size_t> skipped;
  std::vector<Vec> deltas;
  std::vector<Vec> attns;
};

using ExampleContribution = std::vector<LayerContribution>;  // indexed by layer - lo

ExampleContribution contribute(const ToyTransformer& model, const Example& example,
                               const ExtractConfig& cfg) {
  if (example.tokens.empty()) throw InputError("extract: empty example");
  const std::size_t d = model.config.d_model;
  const std::size_t chunk_len = cfg.instruction.size();
  std::vector<TokenId> full = cfg.instruction;
  full.insert(full.end(), example.tokens.begin(), example.tokens.end());
  const ActivationTrace trace = forward_full(model, full);
  const double threshold = degenerate_attention_threshold(d);

  ExampleContribution out;
  for (std::size_t l = cfg.layer_lo; l < cfg.layer_hi; ++l) {
    LayerContribution c;
    c.dw = Mat(d, d);
    c.db.assign(d, 0.0);
    const std::span<const Vec> context = trace.block_input(l);
    std::vector<Vec> reduced = attention_all(model.blocks[l], context.subspan(chunk_len), model.config);
    for (std::size_t p = 0; p < reduced.size(); ++p) {
      Vec& a = reduced[p];
      const double a_norm = norm(a);
      if (a_norm < threshold) {
        if (cfg.strict) throw DegenerateAttentionError(l, p);
        c.skipped.push_back(p);
        continue;
      }
      Vec delta = sub(trace.blocks[l].attention[chunk_len + p], a);
      const Vec term = cfg.attn_norm ? scale(delta, 1.0 / a_norm) : delta;
      for (std::size_t r = 0; r < d; ++r) {
        c.db[r] += delta[r];
        for (std::size_t k = 0; k < d; ++k) c.dw(r, k) += term[r] * a[k];
      }
      ++c.n;
      c.deltas.push_back(std::move(delta));
      c.attns.push_back(std::move(a));
    }
    out.push_back(std::move(c));
  }
  return out;
}

// Per-example work in parallel; results and errors are consumed in example order.
std::vector<ExampleContribution> contribute_all(const ToyTransformer& model,
                                                const std::vector<Example>& dataset,
                                                const ExtractConfig& cfg, std::size_t s) {
  std::vector<ExampleContribution> contributions(s);
  std::vector<std::exception_ptr> errors(s);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t es = 0; es < static_cast<std::ptrdiff_t>(s); ++es) {
    const auto e = static_cast<std::size_t>(es);
    try {
      contributions[e] = contribute(model, dataset[e], cfg);
    } catch (...) {
      errors[e] = std::current_exception();
    }
  }
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);
  return contributions;
}

std::size_t consumed(const std::vector<Example>& dataset, const ExtractConfig& cfg) {
  const std::size_t s = std::min(cfg.steps, dataset.size());
  if (s == 0) {
    std::ostringstream msg;
    msg << "empty dataset: nothing to extract from (" << dataset.size() << " examples, steps="
        << cfg.steps << ")";
    throw InputError(msg.str());
  }
  return s;
}

Mat finalize(const Mat& sum, const Schedule& schedule, std::size_t s) {
  // The fixed divisor rescales the running average, so fixed:K is exactly
  // the average times s / K.
  const Mat avg = scale(sum, 1.0 / static_cast<double>(s));
  if (schedule.kind == Schedule::Kind::average) return avg;
  return scale(avg, static_cast<double>(s) / schedule.divisor);
}

Vec finalize(const Vec& sum, const Schedule& schedule, std::size_t s) {
  const Vec avg = scale(sum, 1.0 / static_cast<double>(s));
  if (schedule.kind == Schedule::Kind::average) return avg;
  return scale(avg, static_cast<double>(s) / schedule.divisor);
}

double schedule_constant(double c1, const Schedule& schedule, std::size_t step) {
  if (schedule.kind == Schedule::Kind::average) return c1;
  return c1 * static_cast<double>(step) / schedule.divisor;
}

}  // namespace

std::map<std::size_t, PatchCollection> collect_patches(const ToyTransformer& model,
                                                       const std::vector<Example>& dataset,
                                                       const ExtractConfig& cfg) {
  cfg.validate(model.config);
  const std::size_t s = consumed(dataset, cfg);
  std::vector<ExampleContribution> contributions = contribute_all(model, dataset, cfg, s);
  std::map<std::size_t, PatchCollection> out;
  for (std::size_t l = cfg.layer_lo; l < cfg.layer_hi; ++l) out[l].layer = l;
  for (std::size_t e = 0; e < s; ++e) {
    for (std::size_t l = cfg.layer_lo; l < cfg.layer_hi; ++l) {
      LayerContribution& c = contributions[e][l - cfg.layer_lo];
      for (std::size_t i = 0; i < c.n; ++i) {
        out[l].add(std::move(c.deltas[i]), std::move(c.attns[i]),
                   "example " + std::to_string(e) + " position " + std::to_string(i));
      }
    }
  }
  return out;
}

ExtractResult run_algorithm1(const ToyTransformer& model, const std::vector<Example>& dataset,
                             const ExtractConfig& cfg) {
  cfg.validate(model.config);
  const std::size_t s = consumed(dataset, cfg);
  const std::size_t d = model.config.d_model;
  const std::size_t n_layers = cfg.layer_hi - cfg.layer_lo;
  std::vector<ExampleContribution> contributions = contribute_all(model, dataset, cfg, s);

  ExtractResult result;
  ExtractionLog& log = result.log;
  log.c1 = cfg.c1;
  log.schedule = cfg.schedule;
  log.steps_consumed = s;

  std::vector<Mat> dw(n_layers, Mat(d, d));
  std::vector<Vec> db(n_layers, Vec(d, 0.0));
  std::vector<PatchCollection> pooled(n_layers);
  std::size_t tokens = 0;
  const bool rank_one = cfg.solver_mode == SolverMode::alg1_rank_one;

  for (std::size_t e = 0; e < s; ++e) {
    tokens += dataset[e].tokens.size();
    for (std::size_t li = 0; li < n_layers; ++li) {
      const std::size_t layer = cfg.layer_lo + li;
      LayerContribution& c = contributions[e][li];
      for (std::size_t p : c.skipped) log.skipped.push_back({e + 1, layer, p});
      if (c.n > 0) {
        const double inv_n = 1.0 / static_cast<double>(c.n);
        dw[li] = add(dw[li], scale(c.dw, cfg.c1 * inv_n));
        db[li] = add(db[li], scale(c.db, cfg.c2 * inv_n));
      }
      for (std::size_t i = 0; i < c.n; ++i) {
        pooled[li].layer = layer;
        pooled[li].add(std::move(c.deltas[i]), std::move(c.attns[i]));
      }
      if (rank_one) {
        log.records.push_back({e + 1, layer, norm(finalize(db[li], cfg.schedule, e + 1)),
                               frobenius(finalize(dw[li], cfg.schedule, e + 1)),
                               schedule_constant(cfg.c1, cfg.schedule, e + 1), tokens});
      }
    }
  }

  std::size_t total = 0;
  for (const PatchCollection& pc : pooled) total += pc.size();
  if (total == 0)
    throw InputError("empty dataset: every attention output was degenerate, nothing to extract");

  std::vector<ThoughtPatch> patches;
  for (std::size_t li = 0; li < n_layers; ++li) {
    const std::size_t layer = cfg.layer_lo + li;
    const PatchCollection& coll = pooled[li];
    ThoughtPatch patch;
    patch.layer = layer;
    patch.application = cfg.application;
    Mat square(d, d);  // the d x d form whose loss is reported
    if (rank_one) {
      square = finalize(dw[li], cfg.schedule, s);
      patch.delta_vec = finalize(db[li], cfg.schedule, s);
      patch.solver = {SolverKind::rank_one_sum, cfg.c1, cfg.attn_norm};
    } else if (coll.empty()) {
      patch.delta_vec.assign(d, 0.0);
      patch.solver = {cfg.solver_mode == SolverMode::exact ? SolverKind::exact : SolverKind::corrected,
                      cfg.solver_param, false};
    } else {
      Mat solved;
      if (cfg.solver_mode == SolverMode::exact) {
        solved = solve_exact(coll, cfg.solver_param).delta_mat;
        patch.solver = cfg.solver_param == 0.0 ? SolverSpec{SolverKind::exact, 0.0, false}
                                               : SolverSpec{SolverKind::ridge, cfg.solver_param, false};
      } else {
        const double lambda = cfg.solver_param > 0.0 ? cfg.solver_param : default_lambda(coll);
        solved = solve_corrected(coll, lambda);
        patch.solver = {SolverKind::corrected, lambda, false};
      }
      square = scale(solved, cfg.c1);
      patch.delta_vec = scale(mean_thought_vector(coll), cfg.c2);
    }
    if (!coll.empty()) {
      patch.z = z_diagnostics(coll);
      patch.loss = loss(square, coll);
      patch.grad_norm = frobenius(grad_loss(square, coll));
    }
    const bool convert = !rank_one && cfg.application == MatrixApplication::additive;
    patch.delta_mat = convert ? matmul(model.blocks[layer].w_in, square) : square;
    if (!rank_one) {
      log.records.push_back({s, layer, norm(patch.delta_vec), frobenius(patch.delta_mat), cfg.c1,
                             tokens});
    }
    patches.push_back(std::move(patch));
  }
  result.bundle = make_bundle(model, std::move(patches), cfg.to_json());
  return result;
}

double effective_constant(const ExtractionLog& log, std::size_t step) {
  if (step > log.steps_consumed) throw InputError("effective_constant: step beyond the log");
  return schedule_constant(log.c1, log.schedule, step);
}

PatchBundle make_bundle(const ToyTransformer& model, std::vector<ThoughtPatch> patches,
                        const json& config) {
  PatchBundle bundle;
  bundle.model_fingerprint = io::model_fingerprint(model);
  bundle.config_json = config.dump();
  for (ThoughtPatch& p : patches) {
    const std::size_t layer = p.layer;
    if (!bundle.layers.emplace(layer, std::move(p)).second)
      throw InputError("make_bundle: duplicate layer " + std::to_string(layer));
  }
  return bundle;
}

ToyTransformer apply_bundle(const ToyTransformer& model, const PatchBundle& bundle,
                            bool check_fingerprint) {
  if (check_fingerprint && bundle.model_fingerprint != io::model_fingerprint(model))
    throw FingerprintMismatchError("patch bundle was made for a different model (fingerprint " +
                                   bundle.model_fingerprint + ")");
  ToyTransformer out = model;
  const std::size_t d = model.config.d_model;
  for (const auto& [layer, p] : bundle.layers) {
    if (layer >= out.blocks.size())
      throw InputError("patch bundle layer " + std::to_string(layer) + " is out of range");
    BlockWeights& block = out.blocks[layer];
    if (p.delta_vec.size() != d) throw DimensionError("patch bundle: thought vector width mismatch");
    if (p.application == MatrixApplication::additive) {
      if (p.delta_mat.rows() != block.w_in.rows() || p.delta_mat.cols() != block.w_in.cols()) {
        std::ostringstream msg;
        msg << "patch bundle: additive " << p.delta_mat.rows() << "x" << p.delta_mat.cols()
            << " matrix does not fit W_in (" << block.w_in.rows() << "x" << block.w_in.cols()
            << "); extract with the multiplicative application";
        throw DimensionError(msg.str());
      }
      block.w_in = add(block.w_in, p.delta_mat);
    } else {
      if (p.delta_mat.rows() != d || p.delta_mat.cols() != d)
        throw DimensionError("patch bundle: multiplicative matrix must be d_model x d_model");
      Mat factor = p.delta_mat;
      for (std::size_t i = 0; i < d; ++i) factor(i, i) += 1.0;
      block.w_in = matmul(block.w_in, factor);
    }
    block.b_out = add(block.b_out, p.delta_vec);
  }
  return out;
}

PatchBundle to_additive(const PatchBundle& bundle, const ToyTransformer& model) {
  PatchBundle out = bundle;
  for (auto& [layer, p] : out.layers) {
    if (p.application != MatrixApplication::multiplicative) continue;
    if (layer >= model.blocks.size()) throw InputError("to_additive: layer out of range");
    p.delta_mat = matmul(model.blocks[layer].w_in, p.delta_mat);
    p.application = MatrixApplication::additive;
  }
  return out;
}

PatchBundle scale_bundle(const PatchBundle& bundle, double s) {
  PatchBundle out = bundle;
  for (auto& [layer, p] : out.layers) {
    p.delta_mat = scale(p.delta_mat, s);
    p.delta_vec = scale(p.delta_vec, s);
  }
  return out;
}

}  // namespace tpatch
