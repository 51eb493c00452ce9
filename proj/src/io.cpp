// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpatch/io.hpp"

#include <openssl/evp.h>
#include <unistd.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "tpatch/errors.hpp"
#include "tpatch/format.hpp"

namespace tpatch::io {

using nlohmann::json;

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

namespace {

json number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

double to_number(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json tensor(const Mat& m) {
  return json{{"shape", {m.rows(), m.cols()}},
              {"data", std::vector<double>(m.data().begin(), m.data().end())}};
}

json tensor(const Vec& v) { return json{{"shape", {v.size()}}, {"data", v}}; }

Mat read_mat(const json& j, std::size_t rows, std::size_t cols, const std::string& name) {
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  auto data = j.at("data").get<std::vector<double>>();
  if (shape.size() != 2 || shape[0] != rows || shape[1] != cols || data.size() != rows * cols) {
    std::ostringstream msg;
    msg << "tensor '" << name << "' has shape/data inconsistent with " << rows << "x" << cols;
    throw InputError(msg.str());
  }
  if (!all_finite(data)) throw InputError("tensor '" + name + "' has non-finite entries");
  return Mat(rows, cols, std::move(data));
}

Mat read_mat_any(const json& j, const std::string& name) {
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 2) throw InputError("tensor '" + name + "' is not a matrix");
  return read_mat(j, shape[0], shape[1], name);
}

Vec read_vec(const json& j, std::size_t n, const std::string& name) {
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  auto data = j.at("data").get<Vec>();
  if (shape.size() != 1 || (n != 0 && shape[0] != n) || data.size() != shape[0])
    throw InputError("tensor '" + name + "' has inconsistent shape");
  if (!all_finite(data)) throw InputError("tensor '" + name + "' has non-finite entries");
  return data;
}

json provenance_json(const Provenance& prov) {
  return json{{"command", prov.command}, {"seed", prov.seed}, {"config", prov.config}};
}

void check_header(const json& doc, const std::string& kind) {
  if (!doc.is_object()) throw InputError("document is not a JSON object");
  if (doc.value("kind", std::string{}) != kind)
    throw InputError("expected a '" + kind + "' document");
  const int version = doc.at("format_version").get<int>();
  if (version != kFormatVersion)
    throw InputError("unsupported format_version " + std::to_string(version));
}

template <typename F>
auto guarded(const char* what, F&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw InputError(std::string(what) + ": malformed document: " + e.what());
  }
}

}  // namespace

json config_to_json(const ModelConfig& c) {
  return json{{"d_model", c.d_model},
              {"n_blocks", c.n_blocks},
              {"n_heads", c.n_heads},
              {"d_ff", c.d_ff},
              {"vocab_size", c.vocab_size},
              {"activation", to_string(c.activation)},
              {"pos_encoding", to_string(c.pos_encoding)},
              {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  return guarded("model config", [&] {
    if (!j.is_object()) throw InputError("model config must be a JSON object");
    static const char* kKnown[] = {"d_model",    "n_blocks",   "n_heads",      "d_ff",
                                   "vocab_size", "activation", "pos_encoding", "seed"};
    for (const auto& [key, _] : j.items()) {
      bool known = false;
      for (const char* k : kKnown) known = known || key == k;
      if (!known) throw InputError("model config: unknown field '" + key + "'");
    }
    ModelConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.n_blocks = j.value("n_blocks", c.n_blocks);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.activation = parse_activation(j.value("activation", to_string(c.activation)));
    c.pos_encoding = parse_pos_encoding(j.value("pos_encoding", to_string(c.pos_encoding)));
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  });
}

json model_content(const ToyTransformer& model) {
  json blocks = json::array();
  for (const BlockWeights& b : model.blocks) {
    blocks.push_back(json{{"attn.query", tensor(b.attn.query)},
                          {"attn.key", tensor(b.attn.key)},
                          {"attn.value", tensor(b.attn.value)},
                          {"attn.output", tensor(b.attn.output)},
                          {"w_in", tensor(b.w_in)},
                          {"b_in", tensor(b.b_in)},
                          {"w_out", tensor(b.w_out)},
                          {"b_out", tensor(b.b_out)}});
  }
  return json{{"format_version", kFormatVersion},
              {"kind", "tpatch.model"},
              {"config", config_to_json(model.config)},
              {"tensors",
               {{"embedding", tensor(model.embedding)},
                {"unembedding", tensor(model.unembedding)},
                {"blocks", blocks}}}};
}

std::string model_fingerprint(const ToyTransformer& model) {
  return sha256_hex(model_content(model).dump());
}

std::string serialize_model(const ToyTransformer& model, const Provenance& prov) {
  json doc = model_content(model);
  doc["fingerprint"] = sha256_hex(doc.dump());
  doc["provenance"] = provenance_json(prov);
  return doc.dump(1) + "\n";
}

ToyTransformer parse_model(std::string_view text) {
  return guarded("model checkpoint", [&] {
    const json doc = json::parse(text);
    check_header(doc, "tpatch.model");
    ToyTransformer model;
    model.config = config_from_json(doc.at("config"));
    const ModelConfig& c = model.config;
    const json& t = doc.at("tensors");
    model.embedding = read_mat(t.at("embedding"), c.vocab_size, c.d_model, "embedding");
    model.unembedding = read_mat(t.at("unembedding"), c.d_model, c.vocab_size, "unembedding");
    const json& blocks = t.at("blocks");
    if (blocks.size() != c.n_blocks) throw InputError("block count does not match config");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const json& bj = blocks[i];
      const std::string prefix = "blocks." + std::to_string(i) + ".";
      BlockWeights b;
      b.attn.query = read_mat(bj.at("attn.query"), c.d_model, c.d_model, prefix + "attn.query");
      b.attn.key = read_mat(bj.at("attn.key"), c.d_model, c.d_model, prefix + "attn.key");
      b.attn.value = read_mat(bj.at("attn.value"), c.d_model, c.d_model, prefix + "attn.value");
      b.attn.output = read_mat(bj.at("attn.output"), c.d_model, c.d_model, prefix + "attn.output");
      b.w_in = read_mat(bj.at("w_in"), c.d_ff, c.d_model, prefix + "w_in");
      b.b_in = read_vec(bj.at("b_in"), c.d_ff, prefix + "b_in");
      b.w_out = read_mat(bj.at("w_out"), c.d_model, c.d_ff, prefix + "w_out");
      b.b_out = read_vec(bj.at("b_out"), c.d_model, prefix + "b_out");
      model.blocks.push_back(std::move(b));
    }
    const std::string stored = doc.at("fingerprint").get<std::string>();
    const std::string actual = model_fingerprint(model);
    if (stored != actual) throw InputError("model checkpoint fingerprint mismatch (corrupted file?)");
    return model;
  });
}

json bundle_content(const PatchBundle& bundle) {
  json layers = json::array();
  for (const auto& [layer, p] : bundle.layers) {
    layers.push_back(json{{"layer", layer},
                          {"application", to_string(p.application)},
                          {"solver", p.solver.to_string()},
                          {"delta_vec", tensor(p.delta_vec)},
                          {"delta_mat", tensor(p.delta_mat)},
                          {"diagnostics",
                           {{"z_rank", p.z.rank},
                            {"z_trace", number(p.z.trace)},
                            {"z_min_pivot", number(p.z.min_pivot)},
                            {"z_max_pivot", number(p.z.max_pivot)},
                            {"z_isotropy", number(p.z.isotropy)},
                            {"loss", number(p.loss)},
                            {"grad_norm", number(p.grad_norm)}}}});
  }
  return json{{"format_version", kFormatVersion},
              {"kind", "tpatch.bundle"},
              {"model_fingerprint", bundle.model_fingerprint},
              {"config", json::parse(bundle.config_json)},
              {"layers", layers}};
}

std::string bundle_fingerprint(const PatchBundle& bundle) {
  return sha256_hex(bundle_content(bundle).dump());
}

std::string serialize_bundle(const PatchBundle& bundle, const Provenance& prov) {
  json doc = bundle_content(bundle);
  doc["fingerprint"] = sha256_hex(doc.dump());
  doc["provenance"] = provenance_json(prov);
  return doc.dump(1) + "\n";
}

PatchBundle parse_bundle(std::string_view text) {
  return guarded("patch bundle", [&] {
    const json doc = json::parse(text);
    check_header(doc, "tpatch.bundle");
    PatchBundle bundle;
    bundle.model_fingerprint = doc.at("model_fingerprint").get<std::string>();
    bundle.config_json = doc.at("config").dump();
    for (const json& lj : doc.at("layers")) {
      ThoughtPatch p;
      p.layer = lj.at("layer").get<std::size_t>();
      p.application = parse_matrix_application(lj.at("application").get<std::string>());
      p.solver = SolverSpec::parse(lj.at("solver").get<std::string>());
      p.delta_vec = read_vec(lj.at("delta_vec"), 0, "delta_vec");
      p.delta_mat = read_mat_any(lj.at("delta_mat"), "delta_mat");
      const json& dj = lj.at("diagnostics");
      p.z.rank = dj.at("z_rank").get<std::size_t>();
      p.z.trace = to_number(dj.at("z_trace"));
      p.z.min_pivot = to_number(dj.at("z_min_pivot"));
      p.z.max_pivot = to_number(dj.at("z_max_pivot"));
      p.z.isotropy = to_number(dj.at("z_isotropy"));
      p.loss = to_number(dj.at("loss"));
      p.grad_norm = to_number(dj.at("grad_norm"));
      if (!bundle.layers.emplace(p.layer, std::move(p)).second)
        throw InputError("patch bundle: duplicate layer");
    }
    const std::string stored = doc.at("fingerprint").get<std::string>();
    if (stored != bundle_fingerprint(bundle))
      throw InputError("patch bundle fingerprint mismatch (corrupted file?)");
    return bundle;
  });
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw InputError("write failed for '" + path.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw InputError("cannot write '" + path.string() + "': " + ec.message());
  }
}

void save_model(const ToyTransformer& model, const std::filesystem::path& path,
                const Provenance& prov) {
  write_file_atomic(path, serialize_model(model, prov));
}

ToyTransformer load_model(const std::filesystem::path& path) {
  try {
    return parse_model(read_file(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void save_bundle(const PatchBundle& bundle, const std::filesystem::path& path,
                 const Provenance& prov) {
  write_file_atomic(path, serialize_bundle(bundle, prov));
}

PatchBundle load_bundle(const std::filesystem::path& path) {
  try {
    return parse_bundle(read_file(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::vector<TokenId> parse_tokens(std::string_view text) {
  std::vector<TokenId> tokens;
  std::istringstream in{std::string(text)};
  for (std::string word; in >> word;) {
    const unsigned long long v = parse_unsigned(word);
    if (v > std::numeric_limits<TokenId>::max()) throw InputError("token id too large: " + word);
    tokens.push_back(static_cast<TokenId>(v));
  }
  return tokens;
}

std::string format_tokens(const std::vector<TokenId>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += std::to_string(tokens[i]);
  }
  return out;
}

std::vector<std::vector<TokenId>> read_token_lines(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<std::vector<TokenId>> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    lines.push_back(parse_tokens(line));
  }
  return lines;
}

std::vector<std::string> provenance_preamble(const Provenance& prov) {
  return {"format_version=" + std::to_string(kFormatVersion), "command=" + prov.command,
          "seed=" + std::to_string(prov.seed), "config=" + prov.config.dump()};
}

std::string format_token_lines(const std::vector<std::vector<TokenId>>& lines,
                               const Provenance& prov) {
  std::string out;
  for (const std::string& p : provenance_preamble(prov)) out += "# " + p + "\n";
  for (const auto& line : lines) out += format_tokens(line) + "\n";
  return out;
}

std::string to_csv(const CsvTable& table) {
  std::string out;
  for (const std::string& p : table.preamble) out += "# " + p + "\n";
  auto join = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out.push_back(',');
      out += fields[i];
    }
    out.push_back('\n');
  };
  join(table.header);
  for (const auto& row : table.rows) join(row);
  return out;
}

CsvTable parse_csv(std::string_view text) {
  CsvTable table;
  std::istringstream in{std::string(text)};
  bool have_header = false;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("#", 0) == 0) {
      table.preamble.push_back(line.size() > 2 ? line.substr(2) : std::string{});
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      fields.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
    } else {
      if (fields.size() != table.header.size())
        throw InputError("csv: row has " + std::to_string(fields.size()) + " fields, header has " +
                         std::to_string(table.header.size()));
      table.rows.push_back(std::move(fields));
    }
  }
  return table;
}

}  // namespace tpatch::io
