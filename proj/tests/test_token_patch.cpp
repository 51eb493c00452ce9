// SPDX-FileCopyrightText: 2026 The thoughtpatch Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "reference.hpp"
#include "tpatch/errors.hpp"
#include "tpatch/token_patch.hpp"

using namespace tpatch;

namespace {

ModelConfig config(std::size_t d, std::size_t heads, std::size_t blocks, Activation act,
                   std::uint64_t seed, PosEncoding pe = PosEncoding::none) {
  ModelConfig c;
  c.d_model = d;
  c.n_heads = heads;
  c.n_blocks = blocks;
  c.d_ff = 2 * d;
  c.vocab_size = 32;
  c.activation = act;
  c.pos_encoding = pe;
  c.seed = seed;
  return c;
}

// Oracle for a single block: the weight-patched block applied to the Eigen
// reduced-context attention output reproduces the Eigen full-context output.
double single_block_oracle_gap(const ToyTransformer& model, const PromptSplit& split) {
  const ref::Trace full = ref::forward(model, split.full);
  const ref::Matrix reduced_in = ref::embed(model, std::vector<TokenId>(split.retained().begin(),
                                                                          split.retained().end()), 0);
  const ref::Matrix a = ref::attention(model.blocks[0], reduced_in, model.config);
  const auto c = static_cast<Eigen::Index>(split.chunk_len);
  double worst = 0.0;
  for (Eigen::Index p = 0; p < a.rows(); ++p) {
    const ref::Vector ap = a.row(p).transpose();
    const ref::Vector delta = full.attentions[0].row(c + p).transpose() - ap;
    const ref::Matrix big_delta = delta * ap.transpose() / ap.squaredNorm();
    BlockWeights patched = model.blocks[0];
    patched.w_in = ref::from_eigen(ref::to_eigen(patched.w_in) *
                                   (ref::Matrix::Identity(a.cols(), a.cols()) + big_delta));
    patched.b_out = ref::vec_from_eigen(ref::Vector(ref::to_eigen(patched.b_out) + delta));
    const ref::Matrix out = ref::ffn(patched, a.row(p), model.config.activation);
    worst = std::max(worst, (out - full.outputs[0].row(c + p)).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace

TEST(PromptSplit, Validation) {
  const std::vector<TokenId> chunk = {1, 2}, retained = {3};
  const PromptSplit s = PromptSplit::from_parts(chunk, retained);
  EXPECT_EQ(s.full, (std::vector<TokenId>{1, 2, 3}));
  EXPECT_EQ(s.retained_len(), 1u);
  EXPECT_THROW(PromptSplit::from_parts(std::vector<TokenId>{}, retained), InputError);
  EXPECT_THROW(PromptSplit::from_parts(chunk, std::vector<TokenId>{}), InputError);
}

TEST(TokenPatch, MatrixMapsAToDelta) {
  const ToyTransformer model = init_model(config(8, 2, 2, Activation::gelu, 3));
  Rng rng(1);
  const PromptSplit split = ref::random_split(rng, 3, 5, 32);
  for (std::size_t layer = 0; layer < 2; ++layer) {
    for (std::size_t p = 0; p < 5; ++p) {
      const TokenPatch patch = compute_token_patch(model, split, layer, p);
      EXPECT_LE(max_abs_diff(matvec(token_matrix(patch), patch.a), patch.delta), 1e-14);
    }
  }
}

TEST(TokenPatch, LayerPatchesMatchSinglePatches) {
  const ToyTransformer model = init_model(config(8, 2, 3, Activation::relu, 4));
  Rng rng(2);
  const PromptSplit split = ref::random_split(rng, 2, 6, 32);
  const ActivationTrace trace = forward_full(model, split.full);
  const auto patches = compute_layer_patches(model, trace, split.chunk_len, 2);
  ASSERT_EQ(patches.size(), 6u);
  for (std::size_t p = 0; p < 6; ++p) {
    const TokenPatch single = compute_token_patch(model, trace, split.chunk_len, 2, p);
    EXPECT_EQ(patches[p].delta, single.delta);
    EXPECT_EQ(patches[p].a, single.a);
  }
}

TEST(Equivalence, SingleBlockAgainstOracle) {
  for (std::size_t d : {8u, 16u}) {
    for (std::size_t heads : {1u, 2u, 4u}) {
      for (auto act : {Activation::relu, Activation::gelu}) {
        const ToyTransformer model = init_model(config(d, heads, 1, act, d * 10 + heads));
        Rng rng(d + heads);
        const PromptSplit split = ref::random_split(rng, 4, 6, 32);
        EXPECT_LE(single_block_oracle_gap(model, split), 1e-10);
        const EquivalenceReport rep = verify_equivalence(model, split, {}, 1e-10);
        EXPECT_TRUE(rep.all_pass()) << rep.max_deviation();
      }
    }
  }
}

TEST(Equivalence, DeepStack) {
  for (std::size_t depth : {2u, 3u, 4u}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const ToyTransformer model = init_model(config(16, 2, depth, Activation::gelu, seed));
      Rng rng(seed + 100);
      const PromptSplit split = ref::random_split(rng, 5, 7, 32);
      const EquivalenceReport rep = verify_equivalence(model, split);
      ASSERT_EQ(rep.layers.size(), depth);
      EXPECT_TRUE(rep.all_pass()) << rep.max_deviation();
    }
  }
}

TEST(Equivalence, AdditiveAbsorbedMode) {
  const ToyTransformer model = init_model(config(8, 2, 3, Activation::gelu, 9));
  Rng rng(9);
  const PromptSplit split = ref::random_split(rng, 3, 4, 32);
  const ActivationTrace full = forward_full(model, split.full);
  const ActivationTrace patched = patched_forward(model, split, {}, PatchMode::additive_absorbed);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t p = 0; p < 4; ++p)
      EXPECT_LE(max_abs_diff(patched.blocks[b].output[p], full.blocks[b].output[3 + p]), 1e-8);
}

TEST(Equivalence, AbsolutePositionsStayExact) {
  const ToyTransformer model =
      init_model(config(8, 2, 3, Activation::gelu, 5, PosEncoding::sinusoidal_absolute));
  Rng rng(5);
  const PromptSplit split = ref::random_split(rng, 3, 4, 32);
  EXPECT_TRUE(verify_equivalence(model, split).all_pass());
}

TEST(Equivalence, ReindexedPositionsBreakDeepLayers) {
  // Re-indexing shifts every retained embedding, so the patched run no longer
  // sees the activations the patches were computed from.
  const ToyTransformer model =
      init_model(config(8, 2, 3, Activation::gelu, 5, PosEncoding::sinusoidal_reindexed));
  Rng rng(5);
  const PromptSplit split = ref::random_split(rng, 3, 4, 32);
  EXPECT_FALSE(verify_equivalence(model, split).all_pass());
}

TEST(Equivalence, FaultInjectionIsDetected) {
  const ToyTransformer model = init_model(config(8, 2, 3, Activation::gelu, 6));
  Rng rng(6);
  const PromptSplit split = ref::random_split(rng, 3, 4, 32);
  const PatchHook hook = [](TokenPatch& p) {
    if (p.layer == 1) p.delta[0] += 1e-6;
  };
  const EquivalenceReport rep = verify_equivalence(model, split, hook);
  EXPECT_TRUE(rep.layers[0].pass);
  EXPECT_FALSE(rep.layers[1].pass);
  EXPECT_FALSE(rep.all_pass());
}

TEST(Degenerate, ZeroAttentionIsReported) {
  ToyTransformer model = init_model(config(8, 2, 2, Activation::gelu, 7));
  // Token 0 embeds to zero and the value path is off, so A(C\I, x) = 0 for x = 0.
  for (std::size_t k = 0; k < 8; ++k) model.embedding(0, k) = 0.0;
  model.blocks[0].attn.value = Mat(8, 8);
  const PromptSplit split = PromptSplit::from_parts(std::vector<TokenId>{3, 4}, std::vector<TokenId>{0, 5});
  try {
    verify_equivalence(model, split);
    FAIL() << "expected DegenerateAttentionError";
  } catch (const DegenerateAttentionError& e) {
    EXPECT_EQ(e.layer(), 0u);
    EXPECT_EQ(e.position(), 0u);
  }
  EXPECT_NEAR(degenerate_attention_threshold(16), 4e-12, 1e-25);
}

TEST(ApplyPatch, RejectsWidthMismatch) {
  const ToyTransformer model = init_model(config(8, 2, 1, Activation::gelu, 8));
  TokenPatch patch;
  patch.delta = Vec(4, 1.0);
  patch.a = Vec(4, 1.0);
  EXPECT_THROW(apply_patch(model.blocks[0], patch), DimensionError);
}
