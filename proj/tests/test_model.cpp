// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <numeric>

#include "reference.hpp"
#include "tpatch/errors.hpp"
#include "tpatch/model.hpp"

using namespace tpatch;

namespace {

ModelConfig small_config(std::size_t d = 8, std::size_t heads = 2, Activation act = Activation::gelu,
                         PosEncoding pe = PosEncoding::none) {
  ModelConfig c;
  c.d_model = d;
  c.n_blocks = 3;
  c.n_heads = heads;
  c.d_ff = 3 * d;
  c.vocab_size = 20;
  c.activation = act;
  c.pos_encoding = pe;
  c.seed = 17;
  return c;
}

double max_diff(const std::vector<Vec>& rows, const ref::Matrix& m, std::size_t offset = 0) {
  double worst = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < rows[i].size(); ++k)
      worst = std::max(worst, std::abs(rows[i][k] - m(static_cast<Eigen::Index>(i + offset),
                                                      static_cast<Eigen::Index>(k))));
  return worst;
}

}  // namespace

TEST(ModelConfig, Validation) {
  ModelConfig c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), InputError);
  c = small_config();
  c.d_ff = 0;
  EXPECT_THROW(c.validate(), InputError);
  EXPECT_THROW(parse_activation("tanh"), InputError);
  EXPECT_EQ(parse_pos_encoding(to_string(PosEncoding::sinusoidal_absolute)),
            PosEncoding::sinusoidal_absolute);
}

TEST(InitModel, DeterministicAndShaped) {
  const ModelConfig c = small_config();
  const ToyTransformer a = init_model(c), b = init_model(c);
  EXPECT_EQ(a, b);
  ModelConfig other = c;
  other.seed = 18;
  EXPECT_NE(a, init_model(other));
  EXPECT_EQ(a.blocks.size(), 3u);
  EXPECT_EQ(a.blocks[0].w_in.rows(), c.d_ff);
  EXPECT_EQ(a.blocks[0].w_in.cols(), c.d_model);
  EXPECT_EQ(a.blocks[0].w_out.rows(), c.d_model);
  EXPECT_EQ(a.embedding.rows(), c.vocab_size);
  EXPECT_EQ(a.unembedding.cols(), c.vocab_size);
}

TEST(Activation, GeluAndRelu) {
  EXPECT_NEAR(apply_activation(Activation::gelu, 1.0), 0.8413447460685429, 1e-15);
  EXPECT_NEAR(apply_activation(Activation::gelu, -2.0), -0.04550026389635842, 1e-15);
  EXPECT_EQ(apply_activation(Activation::relu, -3.0), 0.0);
  EXPECT_EQ(apply_activation(Activation::relu, 2.5), 2.5);
}

TEST(Forward, MatchesEigenReference) {
  for (auto act : {Activation::relu, Activation::gelu}) {
    for (auto pe : {PosEncoding::none, PosEncoding::sinusoidal_absolute}) {
      for (std::size_t heads : {1u, 2u, 4u}) {
        const ToyTransformer model = init_model(small_config(8, heads, act, pe));
        Rng rng(heads);
        const auto tokens = ref::random_tokens(rng, 9, model.config.vocab_size);
        const ActivationTrace trace = forward_full(model, tokens);
        const ref::Trace oracle = ref::forward(model, tokens);
        for (std::size_t b = 0; b < model.blocks.size(); ++b) {
          EXPECT_LE(max_diff(trace.blocks[b].attention, oracle.attentions[b]), 1e-12);
          EXPECT_LE(max_diff(trace.blocks[b].output, oracle.outputs[b]), 1e-12);
        }
        EXPECT_LE(max_diff(trace.logits, oracle.logits), 1e-12);
      }
    }
  }
}

TEST(Attention, IsCausal) {
  const ToyTransformer model = init_model(small_config());
  std::vector<TokenId> a = {1, 2, 3, 4, 5};
  std::vector<TokenId> b = {1, 2, 3, 9, 11};
  const auto ta = forward_full(model, a), tb = forward_full(model, b);
  for (std::size_t blk = 0; blk < 3; ++blk)
    for (std::size_t p = 0; p < 3; ++p) EXPECT_EQ(ta.blocks[blk].output[p], tb.blocks[blk].output[p]);
  EXPECT_NE(ta.blocks[0].output[3], tb.blocks[0].output[3]);
}

TEST(Attention, SingleAndAllAgreeBitwise) {
  const ToyTransformer model = init_model(small_config(16, 4));
  Rng rng(5);
  const auto x = embed(model, ref::random_tokens(rng, 12, 20), 0);
  const auto all = attention_all(model.blocks[1], x, model.config);
  for (std::size_t p = 0; p < x.size(); ++p)
    EXPECT_EQ(all[p], attention(model.blocks[1], x, p, model.config));
  const auto w = attention_weights(model.blocks[1], x, 6, model.config);
  ASSERT_EQ(w.size(), 4u);
  for (const Vec& head : w) {
    EXPECT_EQ(head.size(), 7u);
    EXPECT_NEAR(std::accumulate(head.begin(), head.end(), 0.0), 1.0, 1e-15);
  }
  EXPECT_THROW(attention(model.blocks[0], x, 12, model.config), InputError);
}

TEST(Embed, RejectsOutOfVocabulary) {
  const ToyTransformer model = init_model(small_config());
  EXPECT_THROW(forward_full(model, std::vector<TokenId>{1, 20}), InputError);
  EXPECT_THROW(forward_full(model, std::vector<TokenId>{}), InputError);
}

TEST(Embed, SinusoidOffsets) {
  EXPECT_EQ(sinusoidal_position(0, 4), (Vec{0.0, 1.0, 0.0, 1.0}));
  const Vec p3 = sinusoidal_position(3, 4);
  EXPECT_NEAR(p3[0], std::sin(3.0), 1e-15);
  EXPECT_NEAR(p3[2], std::sin(3.0 / 100.0), 1e-15);
  const ToyTransformer model = init_model(small_config(8, 2, Activation::gelu, PosEncoding::sinusoidal_absolute));
  const std::vector<TokenId> toks = {3, 4, 5};
  const auto shifted = embed(model, std::span(toks).subspan(1), 1);
  const auto full = embed(model, toks, 0);
  EXPECT_EQ(shifted[0], full[1]);
}

TEST(Softmax, Normalizes) {
  const Vec p = softmax(Vec{1000.0, 1001.0, 999.0});
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
  EXPECT_EQ(argmax(p), 1u);
  EXPECT_TRUE(all_finite(p));
}
