// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0

#include "tpatch/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "tpatch/errors.hpp"
#include "tpatch/kernels.hpp"

namespace tpatch {

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "gelu"; }

std::string to_string(PosEncoding p) {
  switch (p) {
    case PosEncoding::none:
      return "none";
    case PosEncoding::sinusoidal_reindexed:
      return "sinusoidal_reindexed";
    case PosEncoding::sinusoidal_absolute:
      return "sinusoidal_absolute";
  }
  return "none";
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "gelu") return Activation::gelu;
  throw InputError("unknown activation '" + s + "' (expected relu or gelu)");
}

PosEncoding parse_pos_encoding(const std::string& s) {
  if (s == "none") return PosEncoding::none;
  if (s == "sinusoidal_reindexed") return PosEncoding::sinusoidal_reindexed;
  if (s == "sinusoidal_absolute") return PosEncoding::sinusoidal_absolute;
  throw InputError("unknown pos_encoding '" + s + "'");
}

void ModelConfig::validate() const {
  if (d_model == 0 || n_blocks == 0 || n_heads == 0 || d_ff == 0 || vocab_size == 0)
    throw InputError("model config: all sizes must be >= 1");
  if (d_model % n_heads != 0) {
    std::ostringstream msg;
    msg << "model config: n_heads (" << n_heads << ") does not divide d_model (" << d_model << ")";
    throw InputError(msg.str());
  }
}

const std::vector<Vec>& ActivationTrace::block_input(std::size_t block) const {
  return block == 0 ? input : blocks.at(block - 1).output;
}

ToyTransformer init_model(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const std::size_t d = config.d_model;
  const double inv_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double inv_ff = 1.0 / std::sqrt(static_cast<double>(config.d_ff));

  ToyTransformer model;
  model.config = config;
  // An embedding row is selected by a one-hot input, so its fan-in is 1.
  model.embedding = random_normal_mat(rng, config.vocab_size, d, 1.0);
  model.unembedding = random_normal_mat(rng, d, config.vocab_size, inv_d);
  model.blocks.reserve(config.n_blocks);
  for (std::size_t i = 0; i < config.n_blocks; ++i) {
    BlockWeights block;
    block.attn.query = random_normal_mat(rng, d, d, inv_d);
    block.attn.key = random_normal_mat(rng, d, d, inv_d);
    block.attn.value = random_normal_mat(rng, d, d, inv_d);
    block.attn.output = random_normal_mat(rng, d, d, inv_d);
    block.w_in = random_normal_mat(rng, config.d_ff, d, inv_d);
    block.b_in = random_normal_vec(rng, config.d_ff, inv_d);
    block.w_out = random_normal_mat(rng, d, config.d_ff, inv_ff);
    block.b_out = random_normal_vec(rng, d, inv_ff);
    model.blocks.push_back(std::move(block));
  }
  return model;
}

double apply_activation(Activation act, double z) {
  if (act == Activation::relu) return z > 0.0 ? z : 0.0;
  return 0.5 * z * (1.0 + std::erf(z * (1.0 / std::numbers::sqrt2)));
}

namespace {

struct Projected {
  std::vector<Vec> keys;
  std::vector<Vec> values;
};

Projected project_context(const BlockWeights& block, std::span<const Vec> context) {
  Projected p{std::vector<Vec>(context.size()), std::vector<Vec>(context.size())};
  kernels::project_rows(block.attn.key, context, p.keys);
  kernels::project_rows(block.attn.value, context, p.values);
  return p;
}

// Per-head softmax weights and the mixed value vector for the query at `pos`.
Vec attend(const BlockWeights& block, std::span<const double> x, const Projected& kv,
           std::size_t pos, const ModelConfig& config, std::vector<Vec>* weights_out) {
  const std::size_t d = config.d_model;
  const std::size_t head_dim = d / config.n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const Vec q = matvec(block.attn.query, x);
  Vec mixed(d, 0.0);
  Vec w(pos + 1);
  for (std::size_t h = 0; h < config.n_heads; ++h) {
    const std::size_t lo = h * head_dim;
    double top = -INFINITY;
    for (std::size_t j = 0; j <= pos; ++j) {
      double s = 0.0;
      for (std::size_t t = lo; t < lo + head_dim; ++t) s += q[t] * kv.keys[j][t];
      w[j] = s * inv_scale;
      top = std::max(top, w[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j <= pos; ++j) {
      w[j] = std::exp(w[j] - top);
      total += w[j];
    }
    for (std::size_t j = 0; j <= pos; ++j) w[j] /= total;
    for (std::size_t j = 0; j <= pos; ++j)
      for (std::size_t t = lo; t < lo + head_dim; ++t) mixed[t] += w[j] * kv.values[j][t];
    if (weights_out) weights_out->push_back(w);
  }
  return mixed;
}

void check_query(std::span<const Vec> context, std::size_t query_pos, const ModelConfig& config) {
  if (context.empty()) throw InputError("attention: empty context");
  if (query_pos >= context.size()) throw InputError("attention: query position out of range");
  for (const Vec& v : context)
    if (v.size() != config.d_model) throw DimensionError("attention: context width != d_model");
}

Vec finish_attention(const BlockWeights& block, std::span<const double> x, const Vec& mixed) {
  Vec out = matvec(block.attn.output, mixed);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
  return out;
}

}  // namespace

std::vector<Vec> attention_weights(const BlockWeights& block, std::span<const Vec> context,
                                   std::size_t query_pos, const ModelConfig& config) {
  check_query(context, query_pos, config);
  const Projected kv = project_context(block, context.first(query_pos + 1));
  std::vector<Vec> weights;
  attend(block, context[query_pos], kv, query_pos, config, &weights);
  return weights;
}

Vec attention(const BlockWeights& block, std::span<const Vec> context, std::size_t query_pos,
              const ModelConfig& config) {
  check_query(context, query_pos, config);
  const Projected kv = project_context(block, context.first(query_pos + 1));
  const Vec mixed = attend(block, context[query_pos], kv, query_pos, config, nullptr);
  return finish_attention(block, context[query_pos], mixed);
}

std::vector<Vec> attention_all(const BlockWeights& block, std::span<const Vec> context,
                               const ModelConfig& config) {
  check_query(context, 0, config);
  const Projected kv = project_context(block, context);
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(context.size());
  std::vector<Vec> out(context.size());
#pragma omp parallel for schedule(static) if (n >= 8)
  for (std::ptrdiff_t ps = 0; ps < n; ++ps) {
    const auto p = static_cast<std::size_t>(ps);
    const Vec mixed = attend(block, context[p], kv, p, config, nullptr);
    out[p] = finish_attention(block, context[p], mixed);
  }
  return out;
}

Vec ffn_residual(const BlockWeights& block, std::span<const double> a, Activation act,
                 Vec* pre_ffn) {
  Vec pre = matvec(block.w_in, a);
  for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += block.b_in[i];
  Vec hidden(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) hidden[i] = apply_activation(act, pre[i]);
  Vec out = matvec(block.w_out, hidden);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += block.b_out[i] + a[i];
  if (pre_ffn) *pre_ffn = std::move(pre);
  return out;
}

Vec block_forward(const BlockWeights& block, std::span<const Vec> context, std::size_t query_pos,
                  const ModelConfig& config) {
  const Vec a = attention(block, context, query_pos, config);
  return ffn_residual(block, a, config.activation);
}

Vec sinusoidal_position(std::size_t position, std::size_t d_model) {
  Vec pe(d_model);
  const double pos = static_cast<double>(position);
  for (std::size_t i = 0; i < d_model; ++i) {
    const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model);
    const double angle = pos / std::pow(10000.0, exponent);
    pe[i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return pe;
}

void check_tokens(const ModelConfig& config, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw InputError("empty token sequence");
  for (TokenId t : tokens) {
    if (t >= config.vocab_size) {
      std::ostringstream msg;
      msg << "token id " << t << " out of vocabulary (size " << config.vocab_size << ")";
      throw InputError(msg.str());
    }
  }
}

std::vector<Vec> embed(const ToyTransformer& model, std::span<const TokenId> tokens,
                       std::size_t position_offset) {
  check_tokens(model.config, tokens);
  const std::size_t d = model.config.d_model;
  std::vector<Vec> out;
  out.reserve(tokens.size());
  for (std::size_t p = 0; p < tokens.size(); ++p) {
    auto row = model.embedding.row(tokens[p]);
    Vec x(row.begin(), row.end());
    if (model.config.pos_encoding != PosEncoding::none) {
      const Vec pe = sinusoidal_position(position_offset + p, d);
      for (std::size_t i = 0; i < d; ++i) x[i] += pe[i];
    }
    out.push_back(std::move(x));
  }
  return out;
}

Vec logits_for(const ToyTransformer& model, std::span<const double> x) {
  const std::size_t vocab = model.config.vocab_size;
  Vec logits(vocab, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto row = model.unembedding.row(i);
    for (std::size_t v = 0; v < vocab; ++v) logits[v] += x[i] * row[v];
  }
  return logits;
}

ActivationTrace forward_embedded(const ToyTransformer& model, std::vector<Vec> inputs) {
  if (inputs.empty()) throw InputError("forward: empty input");
  const ModelConfig& config = model.config;
  ActivationTrace trace;
  trace.input = std::move(inputs);
  trace.blocks.reserve(model.blocks.size());
  const std::size_t n = trace.input.size();
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    const BlockWeights& block = model.blocks[b];
    BlockTrace bt;
    bt.attention = attention_all(block, trace.block_input(b), config);
    bt.pre_ffn.resize(n);
    bt.output.resize(n);
#pragma omp parallel for schedule(static) if (n >= 8)
    for (std::ptrdiff_t ps = 0; ps < static_cast<std::ptrdiff_t>(n); ++ps) {
      const auto p = static_cast<std::size_t>(ps);
      bt.output[p] = ffn_residual(block, bt.attention[p], config.activation, &bt.pre_ffn[p]);
    }
    trace.blocks.push_back(std::move(bt));
  }
  const std::vector<Vec>& last = model.blocks.empty() ? trace.input : trace.blocks.back().output;
  trace.logits.reserve(n);
  for (const Vec& x : last) trace.logits.push_back(logits_for(model, x));
  return trace;
}

ActivationTrace forward_full(const ToyTransformer& model, std::span<const TokenId> tokens) {
  return forward_embedded(model, embed(model, tokens, 0));
}

Vec softmax(std::span<const double> logits) {
  if (logits.empty()) return {};
  const double top = *std::max_element(logits.begin(), logits.end());
  Vec p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - top);
    total += p[i];
  }
  for (double& x : p) x /= total;
  return p;
}

Vec next_token_distribution(const ActivationTrace& trace, std::size_t pos) {
  return softmax(trace.logits.at(pos));
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace tpatch
