// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0
//
// A small decoder-only transformer without normalization layers. Each block is
//
//   T(C, x) = W_out g(W_in A(C, x) + b_in) + b_out + A(C, x)
//
// where A(C, x) = x + MultiHeadCausalAttention(C, x) already carries the
// token's residual.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tpatch/linalg.hpp"

namespace tpatch {

using TokenId = std::uint32_t;

enum class Activation { relu, gelu };
enum class PosEncoding { none, sinusoidal_reindexed, sinusoidal_absolute };

std::string to_string(Activation a);
std::string to_string(PosEncoding p);
Activation parse_activation(const std::string& s);
PosEncoding parse_pos_encoding(const std::string& s);

struct ModelConfig {
  std::size_t d_model = 16;
  std::size_t n_blocks = 2;
  std::size_t n_heads = 2;
  std::size_t d_ff = 64;
  std::size_t vocab_size = 64;
  Activation activation = Activation::gelu;
  PosEncoding pos_encoding = PosEncoding::none;
  std::uint64_t seed = 0;

  /// Throws InputError when a size is zero or n_heads does not divide d_model.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct AttentionWeights {
  Mat query;   // d_model x d_model
  Mat key;     // d_model x d_model
  Mat value;   // d_model x d_model
  Mat output;  // d_model x d_model
  bool operator==(const AttentionWeights&) const = default;
};

struct BlockWeights {
  Mat w_in;    // d_ff x d_model, the first FFN layer
  Vec b_in;    // d_ff
  Mat w_out;   // d_model x d_ff
  Vec b_out;   // d_model, the last-layer bias that token patches shift
  AttentionWeights attn;
  bool operator==(const BlockWeights&) const = default;
};

struct ToyTransformer {
  ModelConfig config;
  Mat embedding;    // vocab_size x d_model
  Mat unembedding;  // d_model x vocab_size
  std::vector<BlockWeights> blocks;
  bool operator==(const ToyTransformer&) const = default;
};

struct BlockTrace {
  std::vector<Vec> attention;  // A(C, x) per position
  std::vector<Vec> pre_ffn;    // W_in A + b_in per position
  std::vector<Vec> output;     // block output per position
};

struct ActivationTrace {
  std::vector<Vec> input;  // embedded (and position-encoded) tokens
  std::vector<BlockTrace> blocks;
  std::vector<Vec> logits;

  std::size_t positions() const { return input.size(); }
  /// Activations entering `block`: the embedding for block 0, else the previous output.
  const std::vector<Vec>& block_input(std::size_t block) const;
  /// Activations leaving `block`.
  const std::vector<Vec>& block_output(std::size_t block) const { return blocks.at(block).output; }
};

/// Weights drawn from config.seed, scaled by 1/sqrt(fan_in). Deterministic.
ToyTransformer init_model(const ModelConfig& config);

double apply_activation(Activation act, double z);

/// Per-head softmax weights of `query_pos` over context[0..query_pos].
std::vector<Vec> attention_weights(const BlockWeights& block, std::span<const Vec> context,
                                   std::size_t query_pos, const ModelConfig& config);

/// A(C, x) for the token at query_pos, attending to context[0..query_pos] only.
Vec attention(const BlockWeights& block, std::span<const Vec> context, std::size_t query_pos,
              const ModelConfig& config);

/// A(C, x) for every position of the context (causal). Same values as calling
/// attention() per position.
std::vector<Vec> attention_all(const BlockWeights& block, std::span<const Vec> context,
                               const ModelConfig& config);

/// W_out g(W_in a + b_in) + b_out + a. `pre_ffn` receives W_in a + b_in if non-null.
Vec ffn_residual(const BlockWeights& block, std::span<const double> a, Activation act,
                 Vec* pre_ffn = nullptr);

/// T(C, x) for the token at query_pos.
Vec block_forward(const BlockWeights& block, std::span<const Vec> context, std::size_t query_pos,
                  const ModelConfig& config);

/// Token embeddings plus positional encoding. Positions start at position_offset.
std::vector<Vec> embed(const ToyTransformer& model, std::span<const TokenId> tokens,
                       std::size_t position_offset = 0);

Vec sinusoidal_position(std::size_t position, std::size_t d_model);

/// Runs every block over pre-embedded inputs with the full running context.
ActivationTrace forward_embedded(const ToyTransformer& model, std::vector<Vec> inputs);

/// Embeds (positions from 0) and runs the stack. Throws InputError on an
/// out-of-vocabulary id or an empty sequence.
ActivationTrace forward_full(const ToyTransformer& model, std::span<const TokenId> tokens);

Vec logits_for(const ToyTransformer& model, std::span<const double> x);

Vec softmax(std::span<const double> logits);

/// Softmax of the logits at `pos`.
Vec next_token_distribution(const ActivationTrace& trace, std::size_t pos);

std::size_t argmax(std::span<const double> v);

void check_tokens(const ModelConfig& config, std::span<const TokenId> tokens);

}  // namespace tpatch
