// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-token patches. Removing a prefix chunk I from the prompt and shifting the
// block weights as
//
//   b_out  <- b_out + delta,        delta = A(C, x) - A(C \ I, x)
//   W_in   <- W_in (Id + Delta),    Delta = delta aᵀ / |a|²,  a = A(C \ I, x)
//
// reproduces the full-context block output exactly. Stacked blocks are
// patched one by one with each block's patch computed from the full-context
// activations leaving the block below.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "tpatch/linalg.hpp"
#include "tpatch/model.hpp"

namespace tpatch {

/// A prompt C = [I, x_1 .. x_n] with the chunk I as its first chunk_len tokens.
struct PromptSplit {
  std::vector<TokenId> full;
  std::size_t chunk_len = 0;

  static PromptSplit from_parts(std::span<const TokenId> chunk, std::span<const TokenId> retained);

  std::span<const TokenId> chunk() const { return std::span(full).first(chunk_len); }
  std::span<const TokenId> retained() const { return std::span(full).subspan(chunk_len); }
  std::size_t retained_len() const { return full.size() - chunk_len; }

  /// Throws InputError unless 0 < chunk_len < full.size().
  void validate() const;
};

struct TokenPatch {
  std::size_t layer = 0;
  std::size_t position = 0;  // index into the retained tokens
  Vec delta;
  Vec a;
};

enum class PatchMode {
  multiplicative,     // W (Id + Delta)
  additive_absorbed,  // W + W Delta
};

/// |a| below this is treated as a degenerate attention output.
double degenerate_attention_threshold(std::size_t d_model);

/// Patch for (layer, position) given the unpatched full-context trace of split.full.
TokenPatch compute_token_patch(const ToyTransformer& model, const ActivationTrace& full_trace,
                               std::size_t chunk_len, std::size_t layer, std::size_t position);

/// Convenience overload that runs the full-context forward pass itself.
TokenPatch compute_token_patch(const ToyTransformer& model, const PromptSplit& split,
                               std::size_t layer, std::size_t position);

/// All retained-position patches of one layer, in position order.
std::vector<TokenPatch> compute_layer_patches(const ToyTransformer& model,
                                              const ActivationTrace& full_trace,
                                              std::size_t chunk_len, std::size_t layer);

/// Delta = delta aᵀ / |a|².
Mat token_matrix(const TokenPatch& patch);

/// Copy of `block` with W_in <- W_in (Id + Delta) (or W_in + W_in Delta) and b_out <- b_out + delta.
BlockWeights apply_patch(const BlockWeights& block, const TokenPatch& patch,
                         PatchMode mode = PatchMode::multiplicative);

/// Called on each patch before it is applied; used for fault injection.
using PatchHook = std::function<void(TokenPatch&)>;

/// Runs only the retained tokens, applying each block's token patch before
/// evaluating it. Throws DegenerateAttentionError naming (layer, position).
ActivationTrace patched_forward(const ToyTransformer& model, const PromptSplit& split,
                                const PatchHook& hook = {},
                                PatchMode mode = PatchMode::multiplicative);

/// Retained-only input activations for the reduced prompt, honouring the
/// positional-encoding mode (absolute keeps original positions).
std::vector<Vec> reduced_inputs(const ToyTransformer& model, const PromptSplit& split);

struct LayerDeviation {
  std::size_t layer = 0;
  std::size_t position = 0;  // retained position with the largest deviation
  double max_abs_dev = 0.0;
  bool pass = false;
};

struct EquivalenceReport {
  double tolerance = 1e-8;
  std::vector<LayerDeviation> layers;
  bool all_pass() const;
  double max_deviation() const;
};

inline constexpr double kEquivalenceTolerance = 1e-8;

/// Compares patched_forward against the retained slice of the full-context trace.
EquivalenceReport verify_equivalence(const ToyTransformer& model, const PromptSplit& split,
                                     const PatchHook& hook = {},
                                     double tolerance = kEquivalenceTolerance);

}  // namespace tpatch
