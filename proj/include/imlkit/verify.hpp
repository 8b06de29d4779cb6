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

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "imlkit/config.hpp"
#include "imlkit/decoder.hpp"
#include "imlkit/faf.hpp"
#include "imlkit/highfreq.hpp"
#include "imlkit/model.hpp"
#include "imlkit/nn.hpp"
#include "imlkit/semantic.hpp"
#include "imlkit/tensor.hpp"

namespace imlkit {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;
  bool pass() const { return max_rel_err <= tolerance; }
};

// Central-difference verification of every trainable operation, in double
// precision on small shapes. Used by the gradcheck CLI command and by the
// acceptance suite.
inline std::vector<GradCheckResult> run_gradient_suite() {
  using D = Tensor<double>;
  std::vector<GradCheckResult> results;
  Rng master(0xFD0);

  auto random_fill = [](D& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
    for (auto& v : t.value()) v = rng.uniform(lo, hi);
  };
  auto check = [&](const std::string& name, const std::function<D(const D&)>& fn, D& x,
                   double eps = 1e-5, double tol = 1e-4) {
    GradCheckResult r;
    r.name = name;
    r.tolerance = tol;
    r.max_rel_err = finite_diff_check<double>(fn, x, eps);
    results.push_back(r);
  };

  // --- tensor primitives ---
  {
    Rng rng = master.fork(1);
    D x = D::zeros({1, 2, 5, 5});
    random_fill(x, rng);
    D w = D::zeros({3, 2, 3, 3});
    random_fill(w, rng);
    check("conv2d/input", [&](const D& in) {
      auto y = conv2d(in, w, 1, 1);
      return sum_all(mul(y, y));
    }, x);
    check("conv2d/kernel", [&](const D& in) {
      auto y = conv2d(x, in, 2, 1);
      return sum_all(mul(y, y));
    }, w);

    D sm = D::zeros({3, 6});
    random_fill(sm, rng);
    D tgt = D::zeros({3, 6});
    random_fill(tgt, rng);
    check("softmax_lastdim", [&](const D& in) {
      return sum_all(mul(softmax_lastdim(in), tgt.detach()));
    }, sm, 1e-6);

    D ln_x = D::zeros({4, 5});
    random_fill(ln_x, rng);
    D gain = D::zeros({5});
    random_fill(gain, rng);
    D bias = D::zeros({5});
    random_fill(bias, rng);
    check("layer_norm/input", [&](const D& in) {
      auto y = layer_norm(in, gain, bias, 1e-5);
      return sum_all(mul(y, tgt.detach()));
    }, ln_x);
    check("layer_norm/gain", [&](const D& in) {
      auto y = layer_norm(ln_x, in, bias, 1e-5);
      return sum_all(mul(y, y));
    }, gain);

    D map = D::zeros({2, 5, 5});
    random_fill(map, rng);
    std::vector<double> pts;
    for (int i = 0; i < 8; ++i) {
      pts.push_back(rng.uniform(0.2, 3.8));
      pts.push_back(rng.uniform(0.2, 3.8));
    }
    D points = D::from_data({8, 2}, pts);
    check("bilinear_sample/map", [&](const D& in) {
      auto y = bilinear_sample(in, points);
      return sum_all(mul(y, y));
    }, map, 1e-6);
    check("bilinear_sample/points", [&](const D& in) {
      auto y = bilinear_sample(map, in);
      return sum_all(mul(y, y));
    }, points, 1e-6);

    D lx = D::zeros({3, 7});
    random_fill(lx, rng, -3.0, 3.0);
    D ly = D::zeros({3, 7});
    for (auto& v : ly.value()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    check("weighted_bce_with_logits", [&](const D& in) {
      return weighted_bce_with_logits(in, ly, 2.5, 1.0);
    }, lx, 1e-6);
  }

  // --- constrained high-pass stem ---
  {
    Rng rng = master.fork(2);
    ModelConfig cfg;
    cfg.embed_dim = 6;
    cfg.head_dim = 3;
    HfqBranch<double> hfq(cfg, rng);
    D img = D::zeros({1, 3, 8, 8});
    random_fill(img, rng);
    D k3 = hfq.bank.kernels[0].detach();
    check("bayar_stem/kernel3", [&](const D& in) {
      HfqBranch<double> h2 = hfq;
      h2.bank.kernels[0] = in;
      auto t = h2.stem(img);
      return sum_all(mul(t, t));
    }, k3);
    D agg = hfq.agg_weight.detach();
    check("bayar_stem/aggregation", [&](const D& in) {
      HfqBranch<double> h2 = hfq;
      h2.agg_weight = in;
      auto t = h2.stem(img);
      return sum_all(mul(t, t));
    }, agg);
  }

  // --- windowed attention block with prompts ---
  {
    Rng rng = master.fork(3);
    TransformerBlock<double> block(8, 4, 2.0, 1e-5, rng);
    D tokens = D::zeros({1, 16, 8});
    random_fill(tokens, rng);
    D prompts = D::zeros({2, 8});
    random_fill(prompts, rng);
    auto run_block = [&](const TransformerBlock<double>& b, const D& p) {
      D bp = expand(reshape(p, {1, 2, 8}), {1, 2, 8});
      auto res = block_forward_windowed(b, tokens, 4, 4, 2, true, &bp);
      return sum_all(mul(res.tokens, res.tokens));
    };
    check("window_block/prompts", [&](const D& in) { return run_block(block, in); }, prompts);
    D qw = block.q.weight.detach();
    check("window_block/qkv", [&](const D& in) {
      TransformerBlock<double> b2 = block;
      b2.q.weight = in;
      return run_block(b2, prompts);
    }, qw);
    D fw = block.fc1.weight.detach();
    check("window_block/mlp", [&](const D& in) {
      TransformerBlock<double> b2 = block;
      b2.fc1.weight = in;
      return run_block(b2, prompts);
    }, fw);
  }

  // --- alignment and fusion ---
  {
    Rng rng = master.fork(4);
    ModelConfig cfg;
    cfg.faf_heads = 2;
    cfg.faf_points = 2;
    FafLevel<double> faf(4, cfg, rng);
    D fs = D::zeros({1, 16, 4});
    random_fill(fs, rng);
    D fh = D::zeros({1, 16, 4});
    random_fill(fh, rng);
    auto run_faf = [&](FafLevel<double>& f) {
      auto aligned = f.align(fs, fh);
      auto fd = f.fuse(aligned.first, aligned.second, 4, 4);
      return sum_all(mul(fd, fd));
    };
    D cw = faf.channel.fc1.weight.detach();
    check("faf/channel_mlp", [&](const D& in) {
      FafLevel<double> f2 = faf;
      f2.channel.fc1.weight = in;
      return run_faf(f2);
    }, cw);
    D sw = faf.spatial.conv1.weight.detach();
    check("faf/spatial_conv", [&](const D& in) {
      FafLevel<double> f2 = faf;
      f2.spatial.conv1.weight = in;
      return run_faf(f2);
    }, sw);
    D ow = faf.dfa_sem_query.offset_pred.weight.detach();
    check("faf/deformable_offsets", [&](const D& in) {
      FafLevel<double> f2 = faf;
      f2.dfa_sem_query.offset_pred.weight = in;
      return run_faf(f2);
    }, ow);
    D ww = faf.dfa_sem_query.weight_pred.weight.detach();
    check("faf/deformable_weights", [&](const D& in) {
      FafLevel<double> f2 = faf;
      f2.dfa_sem_query.weight_pred.weight = in;
      return run_faf(f2);
    }, ww);
    D g1 = faf.gamma1.detach();
    check("faf/gamma", [&](const D& in) {
      FafLevel<double> f2 = faf;
      f2.gamma1 = in;
      return run_faf(f2);
    }, g1);
  }

  // --- decoder ---
  {
    Rng rng = master.fork(5);
    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.embed_dim = 12;
    cfg.head_dim = 6;
    cfg.decoder_dim = 8;
    cfg.decoder_heads = 2;
    PixelDecoder<double> pix(cfg, rng);
    QueryDecoder<double> dec(cfg, rng);
    std::vector<D> pyr;
    for (std::size_t lv = 0; lv < ModelConfig::kLevels; ++lv) {
      const std::size_t g = cfg.level_grid(lv);
      D t = D::zeros({1, g * g, cfg.level_channels(lv)});
      random_fill(t, rng);
      pyr.push_back(t);
    }
    auto run_dec = [&](PixelDecoder<double>& p, QueryDecoder<double>& d) {
      auto out = p.forward(pyr, cfg);
      auto logits = d.forward(out.level_tokens, out.fullres, cfg, 8, 8);
      return sum_all(mul(logits, logits));
    };
    D q = dec.query.detach();
    check("decoder/query", [&](const D& in) {
      QueryDecoder<double> d2 = dec;
      d2.query = in;
      return run_dec(pix, d2);
    }, q);
    D kw = dec.rounds[0].k.weight.detach();
    check("decoder/cross_attention", [&](const D& in) {
      QueryDecoder<double> d2 = dec;
      d2.rounds[0].k.weight = in;
      return run_dec(pix, d2);
    }, kw);
    D sw = pix.smooth_w[0].detach();
    check("decoder/pixel_smooth", [&](const D& in) {
      PixelDecoder<double> p2 = pix;
      p2.smooth_w[0] = in;
      return run_dec(p2, dec);
    }, sw);
    D mw = dec.mask_embed.weight.detach();
    check("decoder/mask_embed", [&](const D& in) {
      QueryDecoder<double> d2 = dec;
      d2.mask_embed.weight = in;
      return run_dec(pix, d2);
    }, mw);
  }

  // --- full model: loss through every trainable family ---
  {
    Rng rng = master.fork(6);
    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.embed_dim = 6;
    cfg.head_dim = 3;
    cfg.mlp_ratio = 2.0;
    cfg.prompts_per_window = 2;
    cfg.decoder_dim = 8;
    cfg.decoder_heads = 2;
    cfg.faf_heads = 1;
    cfg.faf_points = 2;
    cfg.validate();
    Model<double> model(cfg, 99);
    model.freeze_backbone();
    D img = D::zeros({1, 3, 32, 32});
    random_fill(img, rng, -0.9, 0.9);
    D target = D::zeros({1, 1, 32, 32});
    for (auto& v : target.value()) v = rng.uniform() < 0.2 ? 1.0 : 0.0;
    auto model_loss = [&](Model<double>& m) {
      auto logits = m.forward(img);
      return weighted_bce_with_logits(logits, target, 3.0, 1.0);
    };
    // Swap the parameter handle for the probed tensor so the graph reaches it.
    D orig_prompt = model.prompts().groups[0][0];
    D prompt = orig_prompt.detach();
    check("model/prompt_group", [&](const D& in) {
      model.prompts().groups[0][0] = in;
      return model_loss(model);
    }, prompt);
    model.prompts().groups[0][0] = orig_prompt;
    D orig_gamma = model.faf()[1].gamma1;
    D gamma = orig_gamma.detach();
    check("model/fusion_gamma", [&](const D& in) {
      model.faf()[1].gamma1 = in;
      return model_loss(model);
    }, gamma);
    model.faf()[1].gamma1 = orig_gamma;
  }

  return results;
}

inline bool all_pass(const std::vector<GradCheckResult>& results) {
  for (const auto& r : results) {
    if (!r.pass()) return false;
  }
  return true;
}

}  // namespace imlkit
