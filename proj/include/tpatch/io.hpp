// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0
//
// On-disk formats. Checkpoints and bundles are JSON documents with explicit
// tensor shapes, shortest round-trip decimals and a SHA-256 fingerprint of the
// canonical (compact, key-sorted) serialization of their content. Reports are
// CSV files with a '#'-prefixed provenance preamble.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tpatch/distill.hpp"
#include "tpatch/model.hpp"

namespace tpatch::io {

inline constexpr int kFormatVersion = 1;

/// Producing-command identity embedded in every output file.
struct Provenance {
  std::string command;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
};

std::string sha256_hex(std::string_view bytes);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

/// Canonical content of a model (everything the fingerprint covers).
nlohmann::json model_content(const ToyTransformer& model);
std::string model_fingerprint(const ToyTransformer& model);
std::string serialize_model(const ToyTransformer& model, const Provenance& prov);
/// Throws InputError on malformed input or a fingerprint mismatch.
ToyTransformer parse_model(std::string_view text);

nlohmann::json bundle_content(const PatchBundle& bundle);
std::string bundle_fingerprint(const PatchBundle& bundle);
std::string serialize_bundle(const PatchBundle& bundle, const Provenance& prov);
PatchBundle parse_bundle(std::string_view text);

void save_model(const ToyTransformer& model, const std::filesystem::path& path,
                const Provenance& prov);
ToyTransformer load_model(const std::filesystem::path& path);
void save_bundle(const PatchBundle& bundle, const std::filesystem::path& path,
                 const Provenance& prov);
PatchBundle load_bundle(const std::filesystem::path& path);

/// Whitespace-separated token ids.
std::vector<TokenId> parse_tokens(std::string_view text);
std::string format_tokens(const std::vector<TokenId>& tokens);

/// One sequence per non-empty line; '#' lines are comments.
std::vector<std::vector<TokenId>> read_token_lines(const std::filesystem::path& path);
std::string format_token_lines(const std::vector<std::vector<TokenId>>& lines,
                               const Provenance& prov);

struct CsvTable {
  std::vector<std::string> preamble;  // without the leading "# "
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::vector<std::string> provenance_preamble(const Provenance& prov);
std::string to_csv(const CsvTable& table);
CsvTable parse_csv(std::string_view text);

std::string read_file(const std::filesystem::path& path);
/// Writes to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace tpatch::io
