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
#include "imlkit/decoder.hpp"
#include "imlkit/model.hpp"
#include "imlkit/tensor.hpp"
#include "oracles.hpp"
#include "test_utils.hpp"

using imlkit::ModelConfig;
using imlkit::Tensor;
using D = Tensor<double>;
using testutil::random_tensor;

namespace {

ModelConfig small_cfg() {
  ModelConfig cfg;
  cfg.image_size = 32;  // grids 8,4,2,1
  cfg.embed_dim = 12;
  cfg.head_dim = 6;
  cfg.window = 4;
  cfg.mlp_ratio = 2.0;
  cfg.decoder_dim = 8;
  cfg.decoder_heads = 2;
  cfg.prompts_per_window = 2;
  cfg.faf_heads = 2;
  cfg.faf_points = 2;
  cfg.validate();
  return cfg;
}

std::vector<D> random_pyramid(const ModelConfig& cfg, imlkit::Rng& rng) {
  std::vector<D> pyr;
  for (std::size_t lv = 0; lv < ModelConfig::kLevels; ++lv) {
    const std::size_t g = cfg.level_grid(lv);
    pyr.push_back(random_tensor<double>({1, g * g, cfg.level_channels(lv)}, rng));
  }
  return pyr;
}

}  // namespace

TEST_CASE("pixel decoder doubles resolution per stage") {
  imlkit::Rng rng(1);
  auto cfg = small_cfg();
  imlkit::PixelDecoder<double> dec(cfg, rng);
  auto pyr = random_pyramid(cfg, rng);
  auto out = dec.forward(pyr, cfg);
  for (std::size_t lv = 0; lv < ModelConfig::kLevels; ++lv) {
    const std::size_t g = cfg.level_grid(lv);
    REQUIRE(out.level_tokens[lv].shape() == imlkit::Shape{1, g * g, cfg.decoder_dim});
  }
  REQUIRE(out.fullres.shape() ==
          imlkit::Shape{1, cfg.patch_grid() * cfg.patch_grid(), cfg.decoder_dim});
}

TEST_CASE("pixel decoder of an all-zero pyramid with bias-free convs is zero") {
  imlkit::Rng rng(2);
  auto cfg = small_cfg();
  imlkit::PixelDecoder<double> dec(cfg, rng);
  for (auto& lat : dec.laterals) testutil::zero_out(lat.bias);
  for (auto& b : dec.smooth_b) testutil::zero_out(b);
  std::vector<D> pyr;
  for (std::size_t lv = 0; lv < ModelConfig::kLevels; ++lv) {
    const std::size_t g = cfg.level_grid(lv);
    pyr.push_back(D::zeros({1, g * g, cfg.level_channels(lv)}));
  }
  auto out = dec.forward(pyr, cfg);
  for (const auto& t : out.level_tokens) {
    for (auto v : t.value()) REQUIRE(v == 0.0);
  }
}

TEST_CASE("pixel decoder rejects inconsistent level shapes") {
  imlkit::Rng rng(3);
  auto cfg = small_cfg();
  imlkit::PixelDecoder<double> dec(cfg, rng);
  auto pyr = random_pyramid(cfg, rng);
  pyr[1] = random_tensor<double>({1, 9, cfg.level_channels(1)}, rng);
  REQUIRE_THROWS_AS(dec.forward(pyr, cfg), std::invalid_argument);
}

TEST_CASE("one pixel-decoder stage equals primitive recomposition") {
  imlkit::Rng rng(4);
  auto cfg = small_cfg();
  imlkit::PixelDecoder<double> dec(cfg, rng);
  auto pyr = random_pyramid(cfg, rng);
  auto out = dec.forward(pyr, cfg);

  // recompose the coarsest stage: lateral(l4) -> up x2 -> +lateral(l3) -> 3x3 conv
  const std::size_t D_ = cfg.decoder_dim;
  const std::size_t g4 = cfg.level_grid(3), g3 = cfg.level_grid(2);
  auto l4 = dec.laterals[3].forward(pyr[3]);
  auto m4 = imlkit::permute(imlkit::reshape(l4, {1, g4, g4, D_}), {0, 3, 1, 2});
  auto up = imlkit::resize_bilinear(m4, g3, g3);
  auto l3 = dec.laterals[2].forward(pyr[2]);
  auto m3 = imlkit::permute(imlkit::reshape(l3, {1, g3, g3, D_}), {0, 3, 1, 2});
  auto merged = imlkit::conv2d(imlkit::add(up, m3), dec.smooth_w[2], 1, 1);
  merged = imlkit::add(merged, imlkit::expand(imlkit::reshape(dec.smooth_b[2], {1, D_, 1, 1}),
                                              {1, D_, g3, g3}));
  auto tokens = imlkit::permute(imlkit::reshape(merged, {1, D_, g3 * g3}), {0, 2, 1});
  REQUIRE(testutil::max_abs_diff(out.level_tokens[2], tokens) <= 1e-12);
}

TEST_CASE("an all-visible mask equals plain cross-attention") {
  imlkit::Rng rng(5);
  auto cfg = small_cfg();
  imlkit::QueryDecoder<double> dec(cfg, rng);
  const std::size_t N = 16, Dd = cfg.decoder_dim;
  D mem = random_tensor<double>({2, N, Dd}, rng);
  D q = random_tensor<double>({2, 1, Dd}, rng);

  // previous logits all positive -> nothing masked
  D prev = D::full({2, 1, 8, 8}, 3.0);
  auto bias = dec.mask_bias(prev, 4);
  for (auto v : bias.value()) REQUIRE(v == 0.0);
  auto with_mask = dec.rounds[0].forward(q, mem, bias);
  auto plain = dec.rounds[0].forward(q, mem, D::zeros({2, N}));
  REQUIRE(testutil::max_abs_diff(with_mask, plain) == 0.0);
}

TEST_CASE("a single unmasked position receives attention weight one") {
  imlkit::Rng rng(6);
  auto cfg = small_cfg();
  imlkit::QueryDecoderRound<double> round(cfg.decoder_dim, cfg.decoder_heads, 1e-5, rng);
  // identity value path, disabled MLP: q' - q = memory row attended to
  testutil::set_identity(round.v);
  testutil::set_identity(round.proj);
  testutil::zero_out(round.fc2.weight);
  testutil::zero_out(round.fc2.bias);
  const std::size_t N = 9, Dd = cfg.decoder_dim;
  D mem = random_tensor<double>({1, N, Dd}, rng);
  D q = random_tensor<double>({1, 1, Dd}, rng);
  std::vector<double> bias(N, -1e30);
  bias[4] = 0.0;  // only position 4 visible
  auto out = round.forward(q, mem, D::from_data({1, N}, bias));
  for (std::size_t d = 0; d < Dd; ++d) {
    REQUIRE(out.value()[d] - q.value()[d] == Catch::Approx(mem.value()[4 * Dd + d]).margin(1e-12));
  }
}

TEST_CASE("masked attention weights are exactly zero after softmax") {
  imlkit::Rng rng(7);
  D scores = random_tensor<double>({1, 6}, rng);
  std::vector<double> bias = {0.0, -1e30, 0.0, -1e30, -1e30, 0.0};
  auto biased = imlkit::add(scores, D::from_data({1, 6}, bias));
  auto w = imlkit::softmax_lastdim(biased);
  REQUIRE(w.value()[1] == 0.0);
  REQUIRE(w.value()[3] == 0.0);
  REQUIRE(w.value()[4] == 0.0);
  double s = w.value()[0] + w.value()[2] + w.value()[5];
  REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("masked cross-attention matches a dense oracle with -inf injection") {
  imlkit::Rng rng(8);
  auto cfg = small_cfg();
  imlkit::QueryDecoderRound<double> round(cfg.decoder_dim, cfg.decoder_heads, 1e-5, rng);
  const std::size_t N = 12, Dd = cfg.decoder_dim, heads = cfg.decoder_heads, dh = Dd / heads;
  D mem = random_tensor<double>({1, N, Dd}, rng);
  D q = random_tensor<double>({1, 1, Dd}, rng);
  std::vector<double> bias(N, 0.0);
  imlkit::Rng mask_rng(99);
  for (auto& b : bias) {
    if (mask_rng.uniform() < 0.4) b = -1e30;
  }
  bias[2] = 0.0;  // keep at least one visible
  auto out = round.forward(q, mem, D::from_data({1, N}, bias));

  // dense scalar oracle
  auto lin = [&](const imlkit::Linear<double>& l, const std::vector<double>& in) {
    const std::size_t n_in = l.weight.dim(0), n_out = l.weight.dim(1);
    std::vector<double> o(n_out);
    for (std::size_t j = 0; j < n_out; ++j) {
      double acc = l.bias.value()[j];
      for (std::size_t i = 0; i < n_in; ++i) acc += in[i] * l.weight.value()[i * n_out + j];
      o[j] = acc;
    }
    return o;
  };
  auto ln = [&](const imlkit::LayerNormParams<double>& n, const std::vector<double>& in) {
    double mean = 0.0;
    for (auto v : in) mean += v;
    mean /= double(in.size());
    double var = 0.0;
    for (auto v : in) var += (v - mean) * (v - mean);
    var /= double(in.size());
    std::vector<double> o(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
      o[i] = (in[i] - mean) / std::sqrt(var + 1e-5) * n.gain.value()[i] + n.bias.value()[i];
    }
    return o;
  };
  std::vector<double> qrow(q.value());
  auto qn = ln(round.norm_q, qrow);
  auto qp = lin(round.q, qn);
  std::vector<std::vector<double>> kp(N), vp(N);
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<double> row(mem.value().begin() + n * Dd, mem.value().begin() + (n + 1) * Dd);
    kp[n] = lin(round.k, row);
    vp[n] = lin(round.v, row);
  }
  std::vector<double> ctx(Dd, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<double> scores(N);
    for (std::size_t n = 0; n < N; ++n) {
      double acc = 0.0;
      for (std::size_t d = 0; d < dh; ++d) acc += qp[h * dh + d] * kp[n][h * dh + d];
      scores[n] = acc / std::sqrt(double(dh)) + bias[n];
    }
    auto w = oracle::softmax_row(scores);
    for (std::size_t d = 0; d < dh; ++d) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) acc += w[n] * vp[n][h * dh + d];
      ctx[h * dh + d] = acc;
    }
  }
  auto projected = lin(round.proj, ctx);
  std::vector<double> updated(Dd);
  for (std::size_t d = 0; d < Dd; ++d) updated[d] = qrow[d] + projected[d];
  auto mlp_in = ln(round.norm_mlp, updated);
  auto h1 = lin(round.fc1, mlp_in);
  for (auto& v : h1) v = 0.5 * v * (1.0 + std::erf(v * 0.70710678118654752440));
  auto h2 = lin(round.fc2, h1);
  for (std::size_t d = 0; d < Dd; ++d) {
    REQUIRE(out.value()[d] == Catch::Approx(updated[d] + h2[d]).margin(1e-10));
  }
}

TEST_CASE("all-masked fallback drops the mask") {
  imlkit::Rng rng(9);
  auto cfg = small_cfg();
  imlkit::QueryDecoder<double> dec(cfg, rng);
  D prev = D::full({1, 1, 8, 8}, -5.0);  // everything below threshold
  auto bias = dec.mask_bias(prev, 4);
  for (auto v : bias.value()) REQUIRE(v == 0.0);
}

TEST_CASE("predict_mask basics") {
  imlkit::Rng rng(10);
  auto cfg = small_cfg();
  imlkit::QueryDecoder<double> dec(cfg, rng);
  const std::size_t g = cfg.patch_grid(), Dd = cfg.decoder_dim;
  D fullres = random_tensor<double>({1, g * g, Dd}, rng);
  D q = random_tensor<double>({1, 1, Dd}, rng);

  SECTION("zero query projection gives all-zero logits") {
    testutil::zero_out(dec.mask_embed.weight);
    testutil::zero_out(dec.mask_embed.bias);
    auto logits = dec.predict_mask(q, fullres, g, 32, 32);
    REQUIRE(logits.shape() == imlkit::Shape{1, 1, 32, 32});
    for (auto v : logits.value()) REQUIRE(v == 0.0);
  }

  SECTION("tiny case matches the explicit dot-product oracle") {
    auto logits = dec.predict_mask(q, fullres, g, g, g);  // no resize at grid res
    std::vector<double> e(Dd);
    for (std::size_t j = 0; j < Dd; ++j) {
      double acc = dec.mask_embed.bias.value()[j];
      for (std::size_t i = 0; i < Dd; ++i) {
        acc += q.value()[i] * dec.mask_embed.weight.value()[i * Dd + j];
      }
      e[j] = acc;
    }
    for (std::size_t n = 0; n < g * g; ++n) {
      double acc = 0.0;
      for (std::size_t d = 0; d < Dd; ++d) acc += fullres.value()[n * Dd + d] * e[d];
      REQUIRE(logits.value()[n] == Catch::Approx(acc).margin(1e-12));
    }
  }
}

TEST_CASE("query decoder holds exactly one query") {
  imlkit::Rng rng(11);
  auto cfg = small_cfg();
  imlkit::QueryDecoder<double> dec(cfg, rng);
  REQUIRE(dec.query.shape()[0] == 1);
}

TEST_CASE("full localization decoder is deterministic and finite") {
  imlkit::Rng rng(12);
  auto cfg = small_cfg();
  imlkit::PixelDecoder<double> pix(cfg, rng);
  imlkit::QueryDecoder<double> dec(cfg, rng);
  auto pyr = random_pyramid(cfg, rng);

  auto run = [&] {
    auto out = pix.forward(pyr, cfg);
    return dec.forward(out.level_tokens, out.fullres, cfg, 32, 32);
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.shape() == imlkit::Shape{1, 1, 32, 32});
  REQUIRE(a.value() == b.value());
  for (auto v : a.value()) REQUIRE(std::isfinite(v));
}

TEST_CASE("decoder gradients pass finite differences") {
  imlkit::Rng rng(13);
  auto cfg = small_cfg();
  imlkit::PixelDecoder<double> pix(cfg, rng);
  imlkit::QueryDecoder<double> dec(cfg, rng);
  auto pyr = random_pyramid(cfg, rng);

  auto loss_for = [&](imlkit::QueryDecoder<double>& d) {
    auto out = pix.forward(pyr, cfg);
    auto logits = d.forward(out.level_tokens, out.fullres, cfg, 8, 8);
    return imlkit::sum_all(imlkit::mul(logits, logits));
  };

  auto via_query = [&](const D& qv) {
    imlkit::QueryDecoder<double> d2 = dec;
    d2.query = qv;
    return loss_for(d2);
  };
  D q = dec.query.detach();
  REQUIRE(imlkit::finite_diff_check<double>(via_query, q, 1e-5) <= 1e-4);

  auto via_embed = [&](const D& w) {
    imlkit::QueryDecoder<double> d2 = dec;
    d2.mask_embed.weight = w;
    return loss_for(d2);
  };
  D mw = dec.mask_embed.weight.detach();
  REQUIRE(imlkit::finite_diff_check<double>(via_embed, mw, 1e-5) <= 1e-4);

  auto via_smooth = [&](const D& w) {
    imlkit::PixelDecoder<double> p2 = pix;
    p2.smooth_w[0] = w;
    auto out = p2.forward(pyr, cfg);
    auto logits = dec.forward(out.level_tokens, out.fullres, cfg, 8, 8);
    return imlkit::sum_all(imlkit::mul(logits, logits));
  };
  D sw = pix.smooth_w[0].detach();
  REQUIRE(imlkit::finite_diff_check<double>(via_smooth, sw, 1e-5) <= 1e-4);
}
