// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpatch/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "tpatch/errors.hpp"
#include "tpatch/eval.hpp"
#include "tpatch/extract.hpp"
#include "tpatch/format.hpp"
#include "tpatch/io.hpp"
#include "tpatch/lemmas.hpp"
#include "tpatch/token_patch.hpp"

namespace tpatch {

namespace fs = std::filesystem;
using nlohmann::json;

namespace sumtask {

std::vector<TokenId> instruction() { return {35, 36, 37}; }

std::vector<std::vector<TokenId>> generate(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<TokenId>> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto a = static_cast<TokenId>(rng.below(11));
    const auto b = static_cast<TokenId>(rng.below(11));
    const auto c = static_cast<TokenId>(rng.below(11));
    out.push_back({kUser, a, kPlus, b, kPlus, c, kEquals, kModel, a + b + c});
  }
  return out;
}

}  // namespace sumtask

namespace {

fs::path output_path(const std::string& p) {
  fs::path path(p);
  const char* dir = std::getenv("TPATCH_OUT_DIR");
  if (path.is_relative() && dir != nullptr && *dir != '\0') return fs::path(dir) / path;
  return path;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item = text.substr(start, comma - start);
    if (!item.empty()) out.push_back(parse_double(item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<Example> load_examples(const std::string& path) {
  std::vector<Example> out;
  for (auto& tokens : io::read_token_lines(path)) out.push_back({std::move(tokens)});
  return out;
}

std::string dataset_digest(const std::vector<Example>& examples) {
  std::string text;
  for (const Example& e : examples) text += io::format_tokens(e.tokens) + "\n";
  return io::sha256_hex(text);
}

void write_csv(const std::string& path, const io::CsvTable& table) {
  io::write_file_atomic(output_path(path), io::to_csv(table));
}

// Flags shared by extract and sweep, mirroring ExtractConfig.
struct ExtractFlags {
  std::string instruction;
  std::string layers = "0:1";
  std::size_t steps = 300;
  double c1 = 0.015;
  double c2 = 0.0;
  std::string schedule = "avg";
  bool attn_norm = false;
  std::string solver = "alg1";
  std::string application = "auto";
  bool strict = false;

  void add_to(CLI::App* app) {
    app->add_option("--instruction", instruction, "instruction token ids (default: sum task)");
    app->add_option("--layers", layers, "half-open layer range lo:hi")->capture_default_str();
    app->add_option("--steps", steps, "maximum examples consumed")->capture_default_str();
    app->add_option("--c1", c1, "matrix constant")->capture_default_str();
    app->add_option("--c2", c2, "vector constant")->capture_default_str();
    app->add_option("--schedule", schedule, "avg or fixed:K")->capture_default_str();
    app->add_flag("--attn-norm", attn_norm, "divide each rank-one term by |a|");
    app->add_option("--solver", solver, "alg1, exact[:EPS] or corrected[:LAMBDA]")
        ->capture_default_str();
    app->add_option("--application", application, "additive, multiplicative or auto")
        ->capture_default_str();
    app->add_flag("--strict", strict, "abort on degenerate attention outputs");
  }

  ExtractConfig build(const ModelConfig& model) const {
    ExtractConfig cfg;
    cfg.instruction = instruction.empty() ? sumtask::instruction() : io::parse_tokens(instruction);
    parse_layers(layers, cfg.layer_lo, cfg.layer_hi);
    cfg.steps = steps;
    cfg.c1 = c1;
    cfg.c2 = c2;
    cfg.schedule = Schedule::parse(schedule);
    cfg.attn_norm = attn_norm;
    parse_solver_mode(solver, cfg.solver_mode, cfg.solver_param);
    if (application == "auto") {
      const bool fits = cfg.solver_mode != SolverMode::alg1_rank_one || model.d_ff == model.d_model;
      cfg.application = fits ? MatrixApplication::additive : MatrixApplication::multiplicative;
    } else {
      cfg.application = parse_matrix_application(application);
    }
    cfg.strict = strict;
    return cfg;
  }
};

struct Cli {
  Cli(std::ostream& o, std::ostream& e) : out(o), err(e) {}
  std::ostream& out;
  std::ostream& err;

  // init-model
  std::string config_path;
  ModelConfig model_cfg;
  std::string activation = "gelu";
  std::string pos_encoding = "none";
  std::string model_out = "model.json";

  // common inputs
  std::string model_path;
  std::string bundle_path;
  std::string data_path;
  std::uint64_t seed = 0;

  // verify
  std::string chunk;
  std::string retained;
  double tolerance = kEquivalenceTolerance;
  std::string inject_fault;
  std::string verify_report = "verify.csv";

  // gen-dataset
  std::size_t count = 200;
  std::string dataset_out = "dataset.txt";

  // extract
  ExtractFlags extract;
  std::string bundle_out = "bundle.json";
  std::string log_out = "extraction_log.csv";

  // apply
  double apply_scale = 1.0;
  std::string patched_out = "patched_model.json";

  // eval / sweep
  std::size_t batch = 100;
  std::string eval_out = "eval.csv";
  std::string eval_data;
  std::size_t held_out = 20;
  std::string sweep_param = "c1";
  std::string grid;
  std::string sweep_out = "sweep.csv";

  // lemma-check
  std::string sizes = "4,8,16";
  std::size_t spherical_samples = 100000;
  bool inject_rank_deficiency = false;
  std::string lemma_report;

  int init_model(const std::vector<const CLI::Option*>& overridden);
  int verify();
  int gen_dataset();
  int run_extract();
  int apply();
  int eval();
  int sweep();
  int lemma_check();
};

int Cli::init_model(const std::vector<const CLI::Option*>& overridden) {
  ModelConfig c;
  if (!config_path.empty()) {
    try {
      c = io::config_from_json(json::parse(io::read_file(config_path)));
    } catch (const json::exception& e) {
      throw InputError(config_path + ": " + e.what());
    }
  }
  for (const CLI::Option* opt : overridden) {
    if (opt->count() == 0) continue;
    const std::string& name = opt->get_name();
    if (name == "--d-model") c.d_model = model_cfg.d_model;
    if (name == "--blocks") c.n_blocks = model_cfg.n_blocks;
    if (name == "--heads") c.n_heads = model_cfg.n_heads;
    if (name == "--d-ff") c.d_ff = model_cfg.d_ff;
    if (name == "--vocab") c.vocab_size = model_cfg.vocab_size;
    if (name == "--activation") c.activation = parse_activation(activation);
    if (name == "--pos-encoding") c.pos_encoding = parse_pos_encoding(pos_encoding);
    if (name == "--seed") c.seed = seed;
  }
  c.validate();
  const ToyTransformer model = tpatch::init_model(c);
  io::save_model(model, output_path(model_out), {"tpatch init-model", c.seed, io::config_to_json(c)});
  out << "fingerprint " << io::model_fingerprint(model) << "\n";
  return kExitOk;
}

int Cli::verify() {
  const ToyTransformer model = io::load_model(model_path);
  const PromptSplit split = PromptSplit::from_parts(io::parse_tokens(chunk), io::parse_tokens(retained));
  check_tokens(model.config, split.full);
  PatchHook hook;
  if (!inject_fault.empty()) {
    const auto colon = inject_fault.find(':');
    if (colon == std::string::npos) throw InputError("--inject-fault expects LAYER:EPS");
    const std::size_t layer = parse_unsigned(inject_fault.substr(0, colon));
    const double eps = parse_double(inject_fault.substr(colon + 1));
    hook = [layer, eps](TokenPatch& p) {
      if (p.layer == layer) p.delta[0] += eps;
    };
  }
  const EquivalenceReport report = verify_equivalence(model, split, hook, tolerance);

  io::CsvTable table;
  const json cfg = {{"model_fingerprint", io::model_fingerprint(model)},
                    {"chunk", chunk},
                    {"retained", retained},
                    {"tolerance", tolerance},
                    {"inject_fault", inject_fault}};
  table.preamble = io::provenance_preamble({"tpatch verify", model.config.seed, cfg});
  table.header = {"layer", "position", "max_abs_dev", "pass"};
  for (const LayerDeviation& l : report.layers) {
    table.rows.push_back({std::to_string(l.layer), std::to_string(l.position),
                          format_double(l.max_abs_dev), l.pass ? "true" : "false"});
    out << "block " << l.layer << " max_abs_dev " << format_double(l.max_abs_dev)
        << (l.pass ? " pass" : " FAIL") << "\n";
  }
  write_csv(verify_report, table);
  if (!report.all_pass()) {
    err << "verification failed: deviation " << format_double(report.max_deviation())
        << " exceeds tolerance " << format_double(tolerance) << "\n";
    return kExitVerification;
  }
  return kExitOk;
}

int Cli::gen_dataset() {
  const auto lines = sumtask::generate(count, seed);
  const json cfg = {{"task", "sum"}, {"count", count}, {"instruction", sumtask::instruction()}};
  io::write_file_atomic(output_path(dataset_out),
                        io::format_token_lines(lines, {"tpatch gen-dataset", seed, cfg}));
  out << "instruction " << io::format_tokens(sumtask::instruction()) << "\n";
  out << "examples " << lines.size() << "\n";
  return kExitOk;
}

int Cli::run_extract() {
  const ToyTransformer model = io::load_model(model_path);
  const std::vector<Example> dataset = load_examples(data_path);
  const ExtractConfig cfg = extract.build(model.config);
  const ExtractResult result = run_algorithm1(model, dataset, cfg);

  json prov_cfg = cfg.to_json();
  prov_cfg["model_fingerprint"] = io::model_fingerprint(model);
  prov_cfg["dataset_sha256"] = dataset_digest(dataset);
  const io::Provenance prov{"tpatch extract", model.config.seed, prov_cfg};
  io::save_bundle(result.bundle, output_path(bundle_out), prov);

  io::CsvTable table;
  table.preamble = io::provenance_preamble(prov);
  table.preamble.push_back("skipped_positions=" + std::to_string(result.log.skipped.size()));
  table.header = {"step", "layer", "norm_delta_b", "fro_delta_W", "effective_c1", "tokens_consumed"};
  for (const ExtractionRecord& r : result.log.records) {
    table.rows.push_back({std::to_string(r.step), std::to_string(r.layer), format_double(r.norm_delta_b),
                          format_double(r.fro_delta_W), format_double(r.effective_c1),
                          std::to_string(r.tokens_consumed)});
  }
  write_csv(log_out, table);

  if (!result.log.skipped.empty())
    err << "skipped " << result.log.skipped.size() << " degenerate positions\n";
  out << "steps " << result.log.steps_consumed << "\n";
  out << "application " << to_string(cfg.application) << "\n";
  out << "bundle " << io::bundle_fingerprint(result.bundle) << "\n";
  return kExitOk;
}

int Cli::apply() {
  const ToyTransformer model = io::load_model(model_path);
  const PatchBundle bundle = io::load_bundle(bundle_path);
  const ToyTransformer patched = apply_bundle(model, scale_bundle(bundle, apply_scale));
  const json cfg = {{"model_fingerprint", io::model_fingerprint(model)},
                    {"bundle_fingerprint", io::bundle_fingerprint(bundle)},
                    {"scale", apply_scale}};
  io::save_model(patched, output_path(patched_out), {"tpatch apply", model.config.seed, cfg});
  out << "fingerprint " << io::model_fingerprint(patched) << "\n";
  return kExitOk;
}

void print_summary(std::ostream& out, const EvalReport& report) {
  for (Variant v : {Variant::full_context, Variant::unpatched_reduced, Variant::token_patched,
                    Variant::thought_patched}) {
    out << to_string(v) << " mean_tv " << format_double(report.mean_tv(v)) << " mean_act_err "
        << format_double(report.mean_act_err(v)) << " agree_rate "
        << format_double(report.agree_rate(v)) << "\n";
  }
}

int Cli::eval() {
  const ToyTransformer model = io::load_model(model_path);
  const PatchBundle bundle = io::load_bundle(bundle_path);
  const std::vector<Example> dataset = load_examples(data_path);
  const std::vector<TokenId> instr =
      extract.instruction.empty() ? sumtask::instruction() : io::parse_tokens(extract.instruction);
  const auto prompts = make_prompts(instr, dataset, batch);
  const EvalReport report = evaluate(model, bundle, prompts);
  const json cfg = {{"model_fingerprint", io::model_fingerprint(model)},
                    {"bundle_fingerprint", io::bundle_fingerprint(bundle)},
                    {"dataset_sha256", dataset_digest(dataset)},
                    {"instruction", instr},
                    {"batch", batch}};
  write_csv(eval_out, report_table(report, {"tpatch eval", model.config.seed, cfg}));
  print_summary(out, report);
  return kExitOk;
}

int Cli::sweep() {
  const ToyTransformer model = io::load_model(model_path);
  std::vector<Example> train = load_examples(data_path);
  std::vector<Example> test;
  if (!eval_data.empty()) {
    test = load_examples(eval_data);
  } else {
    if (held_out == 0 || held_out >= train.size())
      throw InputError("sweep: --held-out must leave at least one training example");
    test.assign(train.end() - static_cast<std::ptrdiff_t>(held_out), train.end());
    train.resize(train.size() - held_out);
  }
  const ExtractConfig base = extract.build(model.config);
  const auto prompts = make_prompts(base.instruction, test, batch);
  const SweepParam param = parse_sweep_param(sweep_param);
  const std::vector<double> values = parse_list(grid);
  const SweepResult result = tpatch::sweep(model, train, base, param, values, prompts);

  json cfg = base.to_json();
  cfg["model_fingerprint"] = io::model_fingerprint(model);
  cfg["train_sha256"] = dataset_digest(train);
  cfg["eval_sha256"] = dataset_digest(test);
  cfg["param"] = sweep_param;
  cfg["grid"] = values;
  write_csv(sweep_out, sweep_table(result, {"tpatch sweep", model.config.seed, cfg}));
  for (const SweepPoint& p : result.points) {
    out << sweep_param << " " << format_double(p.value) << " mean_tv " << format_double(p.mean_tv)
        << " mean_act_err " << format_double(p.mean_act_err) << " agree_rate "
        << format_double(p.agree_rate) << "\n";
  }
  return kExitOk;
}

int Cli::lemma_check() {
  LemmaOptions opt;
  opt.seed = seed;
  opt.sizes.clear();
  for (double d : parse_list(sizes)) {
    if (d < 1 || d != std::floor(d)) throw InputError("--sizes expects positive integers");
    opt.sizes.push_back(static_cast<std::size_t>(d));
  }
  opt.spherical_samples = spherical_samples;
  opt.inject_rank_deficiency = inject_rank_deficiency;
  const std::vector<LemmaResult> results = run_lemmas(opt);

  std::vector<std::string> failed;
  io::CsvTable table;
  const json cfg = {{"sizes", opt.sizes},
                    {"spherical_samples", spherical_samples},
                    {"inject_rank_deficiency", inject_rank_deficiency}};
  table.preamble = io::provenance_preamble({"tpatch lemma-check", seed, cfg});
  table.header = {"lemma", "pass", "detail"};
  for (const LemmaResult& r : results) {
    out << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    std::string detail = r.detail;
    std::replace(detail.begin(), detail.end(), ',', ' ');
    table.rows.push_back({r.name, r.pass ? "true" : "false", detail});
    if (!r.pass) failed.push_back(r.name);
  }
  if (!lemma_report.empty()) write_csv(lemma_report, table);
  if (!failed.empty()) {
    err << "failed lemmas:";
    for (const std::string& name : failed) err << " " << name;
    err << "\n";
    return kExitVerification;
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Cli cli(out, err);
  CLI::App app{"Transmute a prompt prefix into explicit transformer weight patches", "tpatch"};
  app.require_subcommand(1);

  auto* init = app.add_subcommand("init-model", "write a seeded random toy model checkpoint");
  init->add_option("--config", cli.config_path, "JSON model config (flags override it)");
  std::vector<const CLI::Option*> overrides = {
      init->add_option("--d-model", cli.model_cfg.d_model),
      init->add_option("--blocks", cli.model_cfg.n_blocks),
      init->add_option("--heads", cli.model_cfg.n_heads),
      init->add_option("--d-ff", cli.model_cfg.d_ff),
      init->add_option("--vocab", cli.model_cfg.vocab_size),
      init->add_option("--activation", cli.activation, "relu or gelu"),
      init->add_option("--pos-encoding", cli.pos_encoding,
                       "none, sinusoidal_reindexed or sinusoidal_absolute"),
      init->add_option("--seed", cli.seed)};
  init->add_option("-o,--out", cli.model_out)->capture_default_str();

  auto* verify = app.add_subcommand("verify", "check token-patch equivalence block by block");
  verify->add_option("--model", cli.model_path)->required();
  verify->add_option("--chunk", cli.chunk, "removed prefix token ids")->required();
  verify->add_option("--retained", cli.retained, "retained token ids")->required();
  verify->add_option("--tolerance", cli.tolerance)->capture_default_str();
  verify->add_option("--inject-fault", cli.inject_fault, "LAYER:EPS perturbs that layer's deltas");
  verify->add_option("-o,--report", cli.verify_report)->capture_default_str();

  auto* gen = app.add_subcommand("gen-dataset", "write the toy sum-task dataset");
  gen->add_option("--count", cli.count)->capture_default_str();
  gen->add_option("--seed", cli.seed)->capture_default_str();
  gen->add_option("-o,--out", cli.dataset_out)->capture_default_str();

  auto* extract = app.add_subcommand("extract", "distill a patch bundle from a dataset");
  extract->add_option("--model", cli.model_path)->required();
  extract->add_option("--data", cli.data_path)->required();
  cli.extract.add_to(extract);
  extract->add_option("-o,--out", cli.bundle_out)->capture_default_str();
  extract->add_option("--log", cli.log_out)->capture_default_str();

  auto* apply = app.add_subcommand("apply", "write a model with a bundle folded in");
  apply->add_option("--model", cli.model_path)->required();
  apply->add_option("--bundle", cli.bundle_path)->required();
  apply->add_option("--scale", cli.apply_scale, "multiply the bundle first")->capture_default_str();
  apply->add_option("-o,--out", cli.patched_out)->capture_default_str();

  auto* eval = app.add_subcommand("eval", "compare patched variants with the full-context model");
  eval->add_option("--model", cli.model_path)->required();
  eval->add_option("--bundle", cli.bundle_path)->required();
  eval->add_option("--data", cli.data_path)->required();
  eval->add_option("--instruction", cli.extract.instruction, "instruction token ids (default: sum task)");
  eval->add_option("--batch", cli.batch, "prompts evaluated")->capture_default_str();
  eval->add_option("-o,--out", cli.eval_out)->capture_default_str();

  auto* sweep = app.add_subcommand("sweep", "re-extract over a parameter grid and evaluate");
  sweep->add_option("--model", cli.model_path)->required();
  sweep->add_option("--data", cli.data_path)->required();
  sweep->add_option("--eval-data", cli.eval_data, "held-out prompts (default: tail of --data)");
  sweep->add_option("--held-out", cli.held_out)->capture_default_str();
  sweep->add_option("--param", cli.sweep_param, "c1, c2 or lambda")->capture_default_str();
  sweep->add_option("--grid", cli.grid, "comma-separated values")->required();
  sweep->add_option("--batch", cli.batch)->capture_default_str();
  cli.extract.add_to(sweep);
  sweep->add_option("-o,--out", cli.sweep_out)->capture_default_str();

  auto* lemma = app.add_subcommand("lemma-check", "run the low-rank operator property checks");
  lemma->add_option("--seed", cli.seed)->capture_default_str();
  lemma->add_option("--sizes", cli.sizes)->capture_default_str();
  lemma->add_option("--spherical-samples", cli.spherical_samples)->capture_default_str();
  lemma->add_flag("--inject-rank-deficiency", cli.inject_rank_deficiency);
  lemma->add_option("-o,--report", cli.lemma_report, "optional CSV report");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*init) return cli.init_model(overrides);
    if (*verify) return cli.verify();
    if (*gen) return cli.gen_dataset();
    if (*extract) return cli.run_extract();
    if (*apply) return cli.apply();
    if (*eval) return cli.eval();
    if (*sweep) return cli.sweep();
    if (*lemma) return cli.lemma_check();
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    err << "unexpected error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}

}  // namespace tpatch
