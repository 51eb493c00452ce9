// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpatch/token_patch.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "tpatch/errors.hpp"

namespace tpatch {

PromptSplit PromptSplit::from_parts(std::span<const TokenId> chunk,
                                    std::span<const TokenId> retained) {
  PromptSplit split;
  split.full.assign(chunk.begin(), chunk.end());
  split.full.insert(split.full.end(), retained.begin(), retained.end());
  split.chunk_len = chunk.size();
  split.validate();
  return split;
}

void PromptSplit::validate() const {
  if (chunk_len == 0) throw InputError("prompt split: chunk is empty");
  if (chunk_len >= full.size()) throw InputError("prompt split: no retained tokens");
}

double degenerate_attention_threshold(std::size_t d_model) {
  return 1e-12 * std::sqrt(static_cast<double>(d_model));
}

namespace {

void check_layer(const ToyTransformer& model, const ActivationTrace& trace, std::size_t chunk_len,
                 std::size_t layer) {
  if (layer >= model.blocks.size()) throw InputError("token patch: layer out of range");
  if (trace.blocks.size() != model.blocks.size())
    throw InputError("token patch: trace depth does not match model");
  if (chunk_len == 0 || chunk_len >= trace.positions())
    throw InputError("token patch: invalid chunk length for trace");
}

TokenPatch make_patch(std::size_t layer, std::size_t position, const Vec& full_attention, Vec a) {
  if (norm(a) < degenerate_attention_threshold(a.size()))
    throw DegenerateAttentionError(layer, position);
  TokenPatch patch;
  patch.layer = layer;
  patch.position = position;
  patch.delta = sub(full_attention, a);
  patch.a = std::move(a);
  return patch;
}

}  // namespace

TokenPatch compute_token_patch(const ToyTransformer& model, const ActivationTrace& full_trace,
                               std::size_t chunk_len, std::size_t layer, std::size_t position) {
  check_layer(model, full_trace, chunk_len, layer);
  if (chunk_len + position >= full_trace.positions())
    throw InputError("token patch: position out of range");
  const std::span<const Vec> context = full_trace.block_input(layer);
  Vec a = attention(model.blocks[layer], context.subspan(chunk_len), position, model.config);
  return make_patch(layer, position, full_trace.blocks[layer].attention[chunk_len + position],
                    std::move(a));
}

TokenPatch compute_token_patch(const ToyTransformer& model, const PromptSplit& split,
                               std::size_t layer, std::size_t position) {
  split.validate();
  const ActivationTrace trace = forward_full(model, split.full);
  return compute_token_patch(model, trace, split.chunk_len, layer, position);
}

std::vector<TokenPatch> compute_layer_patches(const ToyTransformer& model,
                                              const ActivationTrace& full_trace,
                                              std::size_t chunk_len, std::size_t layer) {
  check_layer(model, full_trace, chunk_len, layer);
  const std::span<const Vec> context = full_trace.block_input(layer);
  std::vector<Vec> reduced =
      attention_all(model.blocks[layer], context.subspan(chunk_len), model.config);
  std::vector<TokenPatch> patches;
  patches.reserve(reduced.size());
  for (std::size_t p = 0; p < reduced.size(); ++p) {
    patches.push_back(make_patch(layer, p, full_trace.blocks[layer].attention[chunk_len + p],
                                 std::move(reduced[p])));
  }
  return patches;
}

Mat token_matrix(const TokenPatch& patch) {
  const double a2 = dot(patch.a, patch.a);
  if (std::sqrt(a2) < degenerate_attention_threshold(patch.a.size()))
    throw DegenerateAttentionError(patch.layer, patch.position);
  return scale(outer(patch.delta, patch.a), 1.0 / a2);
}

BlockWeights apply_patch(const BlockWeights& block, const TokenPatch& patch, PatchMode mode) {
  const std::size_t d = block.b_out.size();
  if (patch.delta.size() != d || patch.a.size() != d || block.w_in.cols() != d) {
    std::ostringstream msg;
    msg << "apply_patch: patch width " << patch.delta.size() << " does not match block width " << d;
    throw DimensionError(msg.str());
  }
  const Mat delta_mat = token_matrix(patch);
  BlockWeights out = block;
  if (mode == PatchMode::multiplicative) {
    Mat factor = delta_mat;
    for (std::size_t i = 0; i < d; ++i) factor(i, i) += 1.0;
    out.w_in = matmul(block.w_in, factor);
  } else {
    out.w_in = add(block.w_in, matmul(block.w_in, delta_mat));
  }
  for (std::size_t i = 0; i < d; ++i) out.b_out[i] += patch.delta[i];
  return out;
}

std::vector<Vec> reduced_inputs(const ToyTransformer& model, const PromptSplit& split) {
  const std::size_t offset =
      model.config.pos_encoding == PosEncoding::sinusoidal_absolute ? split.chunk_len : 0;
  return embed(model, split.retained(), offset);
}

ActivationTrace patched_forward(const ToyTransformer& model, const PromptSplit& split,
                                const PatchHook& hook, PatchMode mode) {
  split.validate();
  const ModelConfig& config = model.config;
  // Patches always come from one unpatched full-context reference trace.
  const ActivationTrace reference = forward_full(model, split.full);

  ActivationTrace trace;
  trace.input = reduced_inputs(model, split);
  const std::size_t n = trace.input.size();
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    std::vector<TokenPatch> patches = compute_layer_patches(model, reference, split.chunk_len, b);
    if (hook)
      for (TokenPatch& p : patches) hook(p);
    BlockTrace bt;
    // Patching touches only W_in and b_out, so attention is shared across positions.
    bt.attention = attention_all(model.blocks[b], trace.block_input(b), config);
    bt.pre_ffn.resize(n);
    bt.output.resize(n);
#pragma omp parallel for schedule(static) if (n >= 4)
    for (std::ptrdiff_t ps = 0; ps < static_cast<std::ptrdiff_t>(n); ++ps) {
      const auto p = static_cast<std::size_t>(ps);
      const BlockWeights patched = apply_patch(model.blocks[b], patches[p], mode);
      bt.output[p] = ffn_residual(patched, bt.attention[p], config.activation, &bt.pre_ffn[p]);
    }
    trace.blocks.push_back(std::move(bt));
  }
  for (const Vec& x : trace.blocks.back().output) trace.logits.push_back(logits_for(model, x));
  return trace;
}

bool EquivalenceReport::all_pass() const {
  return std::all_of(layers.begin(), layers.end(), [](const LayerDeviation& l) { return l.pass; });
}

double EquivalenceReport::max_deviation() const {
  double m = 0.0;
  for (const LayerDeviation& l : layers) m = std::max(m, l.max_abs_dev);
  return m;
}

EquivalenceReport verify_equivalence(const ToyTransformer& model, const PromptSplit& split,
                                     const PatchHook& hook, double tolerance) {
  split.validate();
  const ActivationTrace full = forward_full(model, split.full);
  const ActivationTrace patched = patched_forward(model, split, hook);
  EquivalenceReport report;
  report.tolerance = tolerance;
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    LayerDeviation dev;
    dev.layer = b;
    for (std::size_t p = 0; p < split.retained_len(); ++p) {
      const double diff =
          max_abs_diff(patched.blocks[b].output[p], full.blocks[b].output[split.chunk_len + p]);
      if (std::isnan(diff) || diff > dev.max_abs_dev) {
        dev.max_abs_dev = diff;
        dev.position = p;
      }
    }
    dev.pass = dev.max_abs_dev <= tolerance;
    report.layers.push_back(dev);
  }
  return report;
}

}  // namespace tpatch
