// Copyright (c) the imlkit project
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "imlkit/config.hpp"
#include "imlkit/nn.hpp"
#include "imlkit/semantic.hpp"
#include "imlkit/tensor.hpp"
#include "test_utils.hpp"

using imlkit::ModelConfig;
using imlkit::Tensor;
using D = Tensor<double>;
using testutil::random_tensor;

namespace {

ModelConfig desk_config() {
  ModelConfig cfg;
  cfg.validate();
  return cfg;
}

}  // namespace

TEST_CASE("patch_embed produces the 16x16x48 token map at desk scale") {
  imlkit::Rng rng(1);
  auto cfg = desk_config();
  imlkit::PatchEmbedder<double> embed(cfg, rng);
  D img = random_tensor<double>({2, 3, 64, 64}, rng);
  auto tokens = embed.forward(img);
  REQUIRE(tokens.shape() == imlkit::Shape{2, 256, 48});
}

TEST_CASE("patch_embed rejects non-divisible inputs") {
  imlkit::Rng rng(2);
  auto cfg = desk_config();
  imlkit::PatchEmbedder<double> embed(cfg, rng);
  D img = D::zeros({1, 3, 62, 64});
  REQUIRE_THROWS_AS(embed.forward(img), std::invalid_argument);
}

TEST_CASE("patch_embed zero image with zero bias and positional table gives zero tokens") {
  imlkit::Rng rng(3);
  auto cfg = desk_config();
  imlkit::PatchEmbedder<double> embed(cfg, rng);
  testutil::zero_out(embed.conv_bias);
  testutil::zero_out(embed.pos_embed);
  D img = D::zeros({1, 3, 64, 64});
  auto tokens = embed.forward(img);
  for (auto v : tokens.value()) REQUIRE(v == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("patch_embed matches recomposition from tensor-core primitives") {
  imlkit::Rng rng(4);
  auto cfg = desk_config();
  imlkit::PatchEmbedder<double> embed(cfg, rng);
  D img = random_tensor<double>({1, 3, 64, 64}, rng);
  auto tokens = embed.forward(img);

  auto y = imlkit::conv2d(img, embed.conv_weight, 4, 0);
  y = imlkit::add(y, imlkit::expand(imlkit::reshape(embed.conv_bias, {1, 48, 1, 1}),
                                    {1, 48, 16, 16}));
  auto t = imlkit::permute(imlkit::reshape(y, {1, 48, 256}), {0, 2, 1});
  t = imlkit::layer_norm(t, embed.norm.gain, embed.norm.bias, 1e-5);
  t = imlkit::add(t, imlkit::expand(imlkit::reshape(embed.pos_embed, {1, 256, 48}),
                                    {1, 256, 48}));
  REQUIRE(testutil::max_abs_diff(tokens, t) <= 1e-12);
}

TEST_CASE("expand_prompts replicates a group per window") {
  imlkit::Rng rng(5);
  D p = random_tensor<double>({2, 3, 8}, rng);
  auto e = imlkit::expand_prompts(p, 4);
  REQUIRE(e.shape() == imlkit::Shape{8, 3, 8});
  // all window copies bit-identical
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t w = 0; w < 4; ++w) {
      for (std::size_t i = 0; i < 3 * 8; ++i) {
        REQUIRE(e.value()[(b * 4 + w) * 24 + i] == p.value()[b * 24 + i]);
      }
    }
  }
}

TEST_CASE("expand then average returns the original prompts exactly") {
  imlkit::Rng rng(6);
  D p = random_tensor<double>({2, 3, 8}, rng);
  auto e = imlkit::expand_prompts(p, 4);
  auto back = imlkit::average_prompts(e, 4);
  REQUIRE(back.shape() == p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) REQUIRE(back.value()[i] == p.value()[i]);
}

TEST_CASE("average_prompts basics") {
  // two windows with prompt outputs v and -v average to zero
  imlkit::Rng rng(7);
  D v = random_tensor<double>({1, 2, 4}, rng);
  auto neg = imlkit::neg(v);
  auto both = imlkit::concat<double>({v, neg}, 0);  // [2,2,4] = B*nw with B=1, nw=2
  auto avg = imlkit::average_prompts(both, 2);
  for (auto x : avg.value()) REQUIRE(x == Catch::Approx(0.0).margin(1e-15));

  // random inputs vs scalar mean oracle
  D w = random_tensor<double>({6, 2, 4}, rng);  // B=2, nw=3
  auto m = imlkit::average_prompts(w, 3);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 0; i < 8; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 3; ++k) acc += w.value()[(b * 3 + k) * 8 + i];
      REQUIRE(m.value()[b * 8 + i] == Catch::Approx(acc / 3.0).margin(1e-12));
    }
  }

  REQUIRE_THROWS_AS(imlkit::average_prompts(w, 4), std::invalid_argument);
}

TEST_CASE("block with zero output projections is the identity") {
  imlkit::Rng rng(8);
  imlkit::TransformerBlock<double> block(16, 8, 2.0, 1e-5, rng);
  testutil::zero_out(block.proj.weight);
  testutil::zero_out(block.proj.bias);
  testutil::zero_out(block.fc2.weight);
  testutil::zero_out(block.fc2.bias);
  D tokens = random_tensor<double>({2, 16, 16}, rng);  // 4x4 grid
  auto res = imlkit::block_forward_windowed(block, tokens, 4, 4, 4, false);
  REQUIRE(res.tokens.shape() == tokens.shape());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    REQUIRE(res.tokens.value()[i] == tokens.value()[i]);
  }
}

TEST_CASE("unshifted blocks keep windows independent") {
  imlkit::Rng rng(9);
  imlkit::TransformerBlock<double> block(8, 4, 4.0, 1e-5, rng);
  D prompts = random_tensor<double>({1, 2, 8}, rng);
  D tokens = random_tensor<double>({1, 64, 8}, rng);  // 8x8 grid, window 4 -> 4 windows

  auto base = imlkit::block_forward_windowed(block, tokens, 8, 8, 4, false, &prompts);

  // zero all tokens of the bottom-right window (rows 4..7, cols 4..7)
  D altered = tokens.detach();
  for (std::size_t y = 4; y < 8; ++y)
    for (std::size_t x = 4; x < 8; ++x)
      for (std::size_t c = 0; c < 8; ++c) altered.value()[(y * 8 + x) * 8 + c] = 0.0;
  auto other = imlkit::block_forward_windowed(block, altered, 8, 8, 4, false, &prompts);

  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 8; ++x) {
      const bool zeroed_window = (y >= 4 && x >= 4);
      if (zeroed_window) continue;
      for (std::size_t c = 0; c < 8; ++c) {
        REQUIRE(base.tokens.value()[(y * 8 + x) * 8 + c] ==
                other.tokens.value()[(y * 8 + x) * 8 + c]);
      }
    }
  }
}

TEST_CASE("shifted partition changes the result but preserves shape") {
  imlkit::Rng rng(10);
  imlkit::TransformerBlock<double> block(8, 4, 2.0, 1e-5, rng);
  D tokens = random_tensor<double>({1, 64, 8}, rng);
  auto plain = imlkit::block_forward_windowed(block, tokens, 8, 8, 4, false);
  auto shifted = imlkit::block_forward_windowed(block, tokens, 8, 8, 4, true);
  REQUIRE(shifted.tokens.shape() == plain.tokens.shape());
  REQUIRE(testutil::max_abs_diff(plain.tokens, shifted.tokens) > 1e-8);
}

TEST_CASE("single window block equals dense self-attention recomposition") {
  imlkit::Rng rng(11);
  const std::size_t C = 8, L = 16;
  imlkit::TransformerBlock<double> block(C, 4, 2.0, 1e-5, rng);
  D tokens = random_tensor<double>({1, L, C}, rng);

  auto res = imlkit::block_forward_windowed(block, tokens, 4, 4, 4, false);

  // dense recomposition from primitives
  auto h = imlkit::layer_norm(tokens, block.norm1.gain, block.norm1.bias, 1e-5);
  auto split = [&](const D& t) {
    return imlkit::permute(imlkit::reshape(t, {1, L, 2, 4}), {0, 2, 1, 3});
  };
  auto qh = split(block.q.forward(h));
  auto kh = split(block.k.forward(h));
  auto vh = split(block.v.forward(h));
  auto scores = imlkit::scale(imlkit::matmul(qh, imlkit::permute(kh, {0, 1, 3, 2})), 1.0 / 2.0);
  auto attn = imlkit::softmax_lastdim(scores);
  auto ctx = imlkit::reshape(imlkit::permute(imlkit::matmul(attn, vh), {0, 2, 1, 3}), {1, L, C});
  auto z = imlkit::add(block.proj.forward(ctx), tokens);
  auto h2 = imlkit::layer_norm(z, block.norm2.gain, block.norm2.bias, 1e-5);
  auto expected = imlkit::add(block.fc2.forward(imlkit::gelu(block.fc1.forward(h2))), z);

  REQUIRE(testutil::max_abs_diff(res.tokens, expected) <= 1e-10);
}

TEST_CASE("zero-valued prompts still occupy attention slots") {
  imlkit::Rng rng(12);
  const std::size_t C = 2;
  imlkit::TransformerBlock<double> block(C, 2, 2.0, 1e-5, rng);
  // Identity attention projections, disabled MLP: the block reduces to
  // x + softmax(q k^T / sqrt(C)) v with q = k = v = LN(x).
  testutil::set_identity(block.q);
  testutil::set_identity(block.k);
  testutil::set_identity(block.v);
  testutil::set_identity(block.proj);
  testutil::zero_out(block.fc2.weight);
  testutil::zero_out(block.fc2.bias);

  const double a = 0.7;
  D token = D::from_data({1, 1, C}, {a, -a});
  D zero_prompt = D::zeros({1, 1, C});

  auto with_prompt = imlkit::block_forward_windowed(block, token, 1, 1, 1, false, &zero_prompt);
  auto without = imlkit::block_forward_windowed(block, token, 1, 1, 1, false);

  // Hand-computed attention over the [prompt, token] pair. LN maps the token
  // to +-a/sqrt(a^2+eps) and the zero prompt to zero.
  const double eps = 1e-5;
  const double xhat = a / std::sqrt(a * a + eps);
  const double s_tt = 2.0 * xhat * xhat / std::sqrt(2.0);  // q.k of the token with itself
  const double s_tp = 0.0;                                  // prompt key is the zero vector
  const double w_tt = std::exp(s_tt) / (std::exp(s_tt) + std::exp(s_tp));
  const double expected0 = a + w_tt * xhat;
  const double expected1 = -a + w_tt * -xhat;
  REQUIRE(with_prompt.tokens.value()[0] == Catch::Approx(expected0).margin(1e-10));
  REQUIRE(with_prompt.tokens.value()[1] == Catch::Approx(expected1).margin(1e-10));

  // Without a prompt the singleton softmax gives weight 1.
  REQUIRE(without.tokens.value()[0] == Catch::Approx(a + xhat).margin(1e-10));
  // The two configurations genuinely differ.
  REQUIRE(std::abs(with_prompt.tokens.value()[0] - without.tokens.value()[0]) > 1e-6);
}

TEST_CASE("block gradients pass finite differences") {
  imlkit::Rng rng(13);
  const std::size_t C = 8;
  imlkit::TransformerBlock<double> block(C, 4, 2.0, 1e-5, rng);
  D tokens = random_tensor<double>({1, 16, C}, rng);
  D prompts = random_tensor<double>({2, C}, rng);

  auto loss_through_block = [&](const D& p) {
    D bp = imlkit::expand(imlkit::reshape(p, {1, 2, C}), {1, 2, C});
    auto res = imlkit::block_forward_windowed(block, tokens, 4, 4, 4, false, &bp);
    return imlkit::sum_all(imlkit::mul(res.tokens, res.tokens));
  };
  REQUIRE(imlkit::finite_diff_check<double>(loss_through_block, prompts, 1e-5) <= 1e-4);

  auto via_q = [&](const D& w) {
    imlkit::TransformerBlock<double> b2 = block;
    b2.q.weight = w;
    auto res = imlkit::block_forward_windowed(b2, tokens, 4, 4, 4, false);
    return imlkit::sum_all(imlkit::mul(res.tokens, res.tokens));
  };
  D qw = block.q.weight.detach();
  REQUIRE(imlkit::finite_diff_check<double>(via_q, qw, 1e-5) <= 1e-4);

  auto via_mlp = [&](const D& w) {
    imlkit::TransformerBlock<double> b2 = block;
    b2.fc1.weight = w;
    auto res = imlkit::block_forward_windowed(b2, tokens, 4, 4, 4, true);
    return imlkit::sum_all(imlkit::mul(res.tokens, res.tokens));
  };
  D mw = block.fc1.weight.detach();
  REQUIRE(imlkit::finite_diff_check<double>(via_mlp, mw, 1e-5) <= 1e-4);
}

TEST_CASE("patch merge halves the grid and doubles the channels") {
  imlkit::Rng rng(14);
  imlkit::PatchMerge<double> merge(8, 1e-5, rng);
  D tokens = random_tensor<double>({2, 64, 8}, rng);
  auto out = merge.forward(tokens, 8, 8);
  REQUIRE(out.shape() == imlkit::Shape{2, 16, 16});
}

TEST_CASE("backbone level shapes follow the halving/doubling ladder") {
  imlkit::Rng rng(15);
  auto cfg = desk_config();
  imlkit::BackboneStages<double> stages(cfg, rng);
  imlkit::PatchEmbedder<double> embed(cfg, rng);
  D img = random_tensor<double>({1, 3, 64, 64}, rng);
  auto tokens = embed.forward(img);
  for (std::size_t lv = 0; lv < ModelConfig::kLevels; ++lv) {
    const std::size_t g = cfg.level_grid(lv);
    tokens = stages.run_level(lv, tokens, g);
    REQUIRE(tokens.shape() == imlkit::Shape{1, g * g, cfg.level_channels(lv)});
    if (lv + 1 < ModelConfig::kLevels) tokens = stages.merge_level(lv, tokens, g);
  }
}
