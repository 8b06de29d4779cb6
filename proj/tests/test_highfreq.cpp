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
#include "imlkit/highfreq.hpp"
#include "imlkit/tensor.hpp"
#include "oracles.hpp"
#include "test_utils.hpp"

using imlkit::Tensor;
using D = Tensor<double>;
using testutil::random_tensor;

namespace {

void check_bank_invariants(const imlkit::BayarKernelBank<double>& bank, double tol) {
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t k = imlkit::BayarKernelBank<double>::kSizes[i];
    const std::size_t taps = k * k;
    const std::size_t center = (k / 2) * k + (k / 2);
    const auto& data = bank.kernels[i].value();
    for (std::size_t s = 0; s < data.size() / taps; ++s) {
      const double* slice = data.data() + s * taps;
      REQUIRE(slice[center] == -1.0);
      double off = 0.0;
      for (std::size_t t = 0; t < taps; ++t) {
        if (t != center) off += slice[t];
      }
      REQUIRE(std::abs(off - 1.0) <= tol);
    }
  }
}

}  // namespace

TEST_CASE("projection of an all-ones 3x3 kernel gives center -1 and off-center 1/8") {
  imlkit::Rng rng(1);
  imlkit::BayarKernelBank<double> bank(48, rng);
  auto& k3 = bank.kernels[0];
  for (auto& v : k3.value()) v = 1.0;
  bank.project();
  const std::size_t taps = 9, center = 4;
  for (std::size_t s = 0; s < k3.size() / taps; ++s) {
    const double* slice = k3.value().data() + s * taps;
    for (std::size_t t = 0; t < taps; ++t) {
      if (t == center) {
        REQUIRE(slice[t] == -1.0);
      } else {
        REQUIRE(slice[t] == Catch::Approx(1.0 / 8.0).margin(1e-15));
      }
    }
  }
}

TEST_CASE("projection leaves already-normalized off-center taps unchanged") {
  imlkit::Rng rng(2);
  imlkit::BayarKernelBank<double> bank(3, rng);
  auto& k3 = bank.kernels[0];
  // one slice per input channel; set a known distribution summing to 1
  std::vector<double> pattern = {0.25, 0.0, 0.25, 0.125, 99.0, 0.125, 0.0, 0.25, 0.0};
  for (std::size_t s = 0; s < k3.size() / 9; ++s) {
    for (std::size_t t = 0; t < 9; ++t) k3.value()[s * 9 + t] = pattern[t];
  }
  bank.project();
  for (std::size_t s = 0; s < k3.size() / 9; ++s) {
    for (std::size_t t = 0; t < 9; ++t) {
      const double expected = (t == 4) ? -1.0 : pattern[t];
      REQUIRE(k3.value()[s * 9 + t] == Catch::Approx(expected).margin(1e-12));
    }
  }
}

TEST_CASE("projection handles a zero off-center sum by resetting to uniform") {
  imlkit::Rng rng(3);
  imlkit::BayarKernelBank<double> bank(3, rng);
  auto& k5 = bank.kernels[1];
  testutil::zero_out(k5);
  bank.project();
  const std::size_t taps = 25, center = 12;
  for (std::size_t s = 0; s < k5.size() / taps; ++s) {
    const double* slice = k5.value().data() + s * taps;
    REQUIRE(slice[center] == -1.0);
    for (std::size_t t = 0; t < taps; ++t) {
      if (t != center) REQUIRE(slice[t] == Catch::Approx(1.0 / 24.0).margin(1e-15));
    }
  }
}

TEST_CASE("bank invariants hold after projecting random kernels") {
  imlkit::Rng rng(4);
  imlkit::BayarKernelBank<double> bank(48, rng);
  check_bank_invariants(bank, 1e-12);
}

TEST_CASE("constant image yields zero response through any projected kernel") {
  imlkit::Rng rng(5);
  imlkit::ModelConfig cfg;
  imlkit::HfqBranch<double> hfq(cfg, rng);
  D img = D::full({1, 3, 16, 16}, 5.0);
  auto feat = hfq.stem_preagg(img);
  REQUIRE(feat.shape() == imlkit::Shape{1, 48, 16, 16});
  for (auto v : feat.value()) REQUIRE(std::abs(v) <= 1e-9);
}

TEST_CASE("constant image tokens are zero before the aggregation bias") {
  imlkit::Rng rng(6);
  imlkit::ModelConfig cfg;
  imlkit::HfqBranch<double> hfq(cfg, rng);
  testutil::zero_out(hfq.agg_bias);
  D img = D::full({1, 3, 64, 64}, 0.25);
  auto tokens = hfq.stem(img);
  REQUIRE(tokens.shape() == imlkit::Shape{1, 256, 48});
  for (auto v : tokens.value()) REQUIRE(std::abs(v) <= 1e-9);
}

TEST_CASE("stem output channel count is three times the per-size bank") {
  imlkit::Rng rng(7);
  imlkit::ModelConfig cfg;
  imlkit::HfqBranch<double> hfq(cfg, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(hfq.bank.kernels[i].dim(0) == cfg.embed_dim / 3);
  }
  D img = random_tensor<double>({1, 3, 64, 64}, rng);
  REQUIRE(hfq.stem(img).shape() == imlkit::Shape{1, 256, 48});
}

TEST_CASE("stem rejects non-divisible inputs") {
  imlkit::Rng rng(8);
  imlkit::ModelConfig cfg;
  imlkit::HfqBranch<double> hfq(cfg, rng);
  REQUIRE_THROWS_AS(hfq.stem(D::zeros({1, 3, 63, 64})), std::invalid_argument);
}

TEST_CASE("impulse response is confined to the 7x7 support union") {
  imlkit::Rng rng(9);
  imlkit::ModelConfig cfg;
  imlkit::HfqBranch<double> hfq(cfg, rng);
  const std::size_t H = 17, W = 17, cy = 8, cx = 8;
  D img = D::zeros({1, 3, H, W});
  img.value()[(0 * H + cy) * W + cx] = 1.0;  // channel 0 impulse

  auto feat = hfq.stem_preagg(img);  // [1,48,17,17]
  for (std::size_t c = 0; c < 48; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t dist = std::max(std::abs(long(y) - long(cy)),
                                          std::abs(long(x) - long(cx)));
        if (dist > 3) {
          REQUIRE(std::abs(feat.value()[(c * H + y) * W + x]) <= 1e-12);
        }
      }
    }
  }

  // Interior responses match a direct zero-padded convolution oracle: the
  // replicate padding only differs at the borders, which the margin excludes.
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t k = imlkit::BayarKernelBank<double>::kSizes[i];
    auto ref = oracle::conv2d(img.value(), 1, 3, H, W, hfq.bank.kernels[i].value(), 16, k, k, 1,
                              k / 2);
    const std::size_t chan_base = i * 16;
    for (std::size_t c = 0; c < 16; ++c) {
      for (std::size_t y = 3; y + 3 < H; ++y) {
        for (std::size_t x = 3; x + 3 < W; ++x) {
          REQUIRE(feat.value()[((chan_base + c) * H + y) * W + x] ==
                  Catch::Approx(ref[(c * H + y) * W + x]).margin(1e-12));
        }
      }
    }
  }
}

TEST_CASE("hfq layer with zero output projections is the identity") {
  imlkit::Rng rng(10);
  imlkit::ModelConfig cfg;
  imlkit::HfqBranch<double> hfq(cfg, rng);
  for (auto& level : hfq.stages.blocks) {
    for (auto& block : level) {
      testutil::zero_out(block.proj.weight);
      testutil::zero_out(block.proj.bias);
      testutil::zero_out(block.fc2.weight);
      testutil::zero_out(block.fc2.bias);
    }
  }
  D tokens = random_tensor<double>({1, 256, 48}, rng);
  auto out = hfq.run_level(0, tokens, 16);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    REQUIRE(out.value()[i] == tokens.value()[i]);
  }
}

TEST_CASE("hfq levels mirror the semantic shape ladder") {
  imlkit::Rng rng(11);
  imlkit::ModelConfig cfg;
  imlkit::HfqBranch<double> hfq(cfg, rng);
  D img = random_tensor<double>({1, 3, 64, 64}, rng);
  auto tokens = hfq.stem(img);
  for (std::size_t lv = 0; lv < imlkit::ModelConfig::kLevels; ++lv) {
    const std::size_t g = cfg.level_grid(lv);
    tokens = hfq.run_level(lv, tokens, g);
    REQUIRE(tokens.shape() == imlkit::Shape{1, g * g, cfg.level_channels(lv)});
    if (lv + 1 < imlkit::ModelConfig::kLevels) tokens = hfq.merge_level(lv, tokens, g);
  }
}

TEST_CASE("hfq layer rejects token counts that do not form the grid") {
  imlkit::Rng rng(12);
  imlkit::ModelConfig cfg;
  imlkit::HfqBranch<double> hfq(cfg, rng);
  D tokens = random_tensor<double>({1, 255, 48}, rng);
  REQUIRE_THROWS_AS(hfq.run_level(0, tokens, 16), std::invalid_argument);
}

TEST_CASE("hfq block forward equals primitive recomposition") {
  imlkit::Rng rng(13);
  imlkit::ModelConfig cfg;
  cfg.embed_dim = 48;
  imlkit::HfqBranch<double> hfq(cfg, rng);
  const auto& block = hfq.stages.blocks[2][0];  // level 3: 4x4 grid, single window
  const std::size_t C = cfg.level_channels(2), L = 16;
  D tokens = random_tensor<double>({1, L, C}, rng);
  auto res = imlkit::block_forward_windowed(block, tokens, 4, 4, 4, false);

  const std::size_t heads = block.heads, dh = block.head_dim;
  auto h = imlkit::layer_norm(tokens, block.norm1.gain, block.norm1.bias, 1e-5);
  auto split = [&](const D& t) {
    return imlkit::permute(imlkit::reshape(t, {1, L, heads, dh}), {0, 2, 1, 3});
  };
  auto scores = imlkit::scale(
      imlkit::matmul(split(block.q.forward(h)),
                     imlkit::permute(split(block.k.forward(h)), {0, 1, 3, 2})),
      1.0 / std::sqrt(double(dh)));
  auto ctx = imlkit::matmul(imlkit::softmax_lastdim(scores), split(block.v.forward(h)));
  auto merged = imlkit::reshape(imlkit::permute(ctx, {0, 2, 1, 3}), {1, L, C});
  auto z = imlkit::add(block.proj.forward(merged), tokens);
  auto h2 = imlkit::layer_norm(z, block.norm2.gain, block.norm2.bias, 1e-5);
  auto expected = imlkit::add(block.fc2.forward(imlkit::gelu(block.fc1.forward(h2))), z);

  REQUIRE(testutil::max_abs_diff(res.tokens, expected) <= 1e-12);
}

TEST_CASE("stem gradients pass finite differences") {
  imlkit::Rng rng(14);
  imlkit::ModelConfig cfg;
  cfg.embed_dim = 6;  // tiny bank keeps the coordinate sweep cheap
  cfg.head_dim = 3;
  imlkit::HfqBranch<double> hfq(cfg, rng);
  D img = random_tensor<double>({1, 3, 8, 8}, rng);

  auto via_agg = [&](const D& w) {
    imlkit::HfqBranch<double> h2 = hfq;
    h2.agg_weight = w;
    auto t = h2.stem(img);
    return imlkit::sum_all(imlkit::mul(t, t));
  };
  D aw = hfq.agg_weight.detach();
  REQUIRE(imlkit::finite_diff_check<double>(via_agg, aw, 1e-5) <= 1e-4);

  auto via_k3 = [&](const D& w) {
    imlkit::HfqBranch<double> h2 = hfq;
    h2.bank.kernels[0] = w;
    auto t = h2.stem(img);
    return imlkit::sum_all(imlkit::mul(t, t));
  };
  D k3 = hfq.bank.kernels[0].detach();
  REQUIRE(imlkit::finite_diff_check<double>(via_k3, k3, 1e-5) <= 1e-4);
}
