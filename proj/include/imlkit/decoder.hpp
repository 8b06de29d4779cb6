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

#include <cmath>
#include <string>
#include <vector>

#include "imlkit/config.hpp"
#include "imlkit/nn.hpp"
#include "imlkit/tensor.hpp"

namespace imlkit {

// FPN-style pixel decoder: lateral projections per level, then top-down x2
// upsampling with additive merges and a 3x3 smoothing conv per stage. Emits
// per-level feature maps plus the finest (patch-resolution) map.
template <typename T>
struct PixelDecoder {
  std::vector<Linear<T>> laterals;           // C_i -> D per level, fine..coarse
  std::vector<Tensor<T>> smooth_w, smooth_b;  // 3x3 convs after each merge
  std::size_t dim = 64;

  PixelDecoder() = default;
  PixelDecoder(const ModelConfig& cfg, Rng& rng) : dim(cfg.decoder_dim) {
    for (std::size_t lv = 0; lv < ModelConfig::kLevels; ++lv) {
      laterals.emplace_back(cfg.level_channels(lv), dim, rng);
    }
    const T s = static_cast<T>(1.0 / std::sqrt(double(dim * 9)));
    for (std::size_t i = 0; i + 1 < ModelConfig::kLevels; ++i) {
      smooth_w.push_back(Tensor<T>::uniform({dim, dim, 3, 3}, rng, -s, s, true));
      smooth_b.push_back(Tensor<T>::uniform({dim}, rng, -s, s, true));
    }
  }

  struct Output {
    std::vector<Tensor<T>> level_tokens;  // [B, N_i, D], index = level 0..3
    Tensor<T> fullres;                    // [B, N_0, D] at patch resolution
  };

  // pyramid[i]: [B, N_i, C_i] for levels 0..3 (fine to coarse).
  Output forward(const std::vector<Tensor<T>>& pyramid, const ModelConfig& cfg) const {
    if (pyramid.size() != ModelConfig::kLevels) {
      throw std::invalid_argument("pixel_decoder: expected " +
                                  std::to_string(ModelConfig::kLevels) + " pyramid levels");
    }
    for (std::size_t lv = 0; lv < pyramid.size(); ++lv) {
      const std::size_t g = cfg.level_grid(lv);
      if (pyramid[lv].dim(1) != g * g || pyramid[lv].dim(2) != cfg.level_channels(lv)) {
        throw std::invalid_argument("pixel_decoder: level " + std::to_string(lv + 1) +
                                    " has shape " + shape_str(pyramid[lv].shape()) +
                                    ", expected grid " + std::to_string(g) + " with " +
                                    std::to_string(cfg.level_channels(lv)) + " channels");
      }
    }
    const std::size_t B = pyramid[0].dim(0);
    Output out;
    out.level_tokens.resize(ModelConfig::kLevels);

    const std::size_t top = ModelConfig::kLevels - 1;
    auto tokens = laterals[top].forward(pyramid[top]);
    out.level_tokens[top] = tokens;
    auto map = to_map(tokens, B, cfg.level_grid(top));
    for (std::size_t lv = top; lv-- > 0;) {
      const std::size_t g = cfg.level_grid(lv);
      auto up = resize_bilinear(map, g, g);
      auto lat = to_map(laterals[lv].forward(pyramid[lv]), B, g);
      auto merged = conv2d(add(up, lat), smooth_w[lv], 1, 1);
      merged = add(merged, expand(reshape(smooth_b[lv], {1, dim, 1, 1}), {B, dim, g, g}));
      map = merged;
      out.level_tokens[lv] = to_tokens(map, B, g);
    }
    out.fullres = out.level_tokens[0];
    return out;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t lv = 0; lv < laterals.size(); ++lv) {
      laterals[lv].collect(out, prefix + ".lateral" + std::to_string(lv + 1));
    }
    for (std::size_t i = 0; i < smooth_w.size(); ++i) {
      collect_param(out, prefix + ".smooth" + std::to_string(i + 1) + ".weight", smooth_w[i]);
      collect_param(out, prefix + ".smooth" + std::to_string(i + 1) + ".bias", smooth_b[i]);
    }
  }

 private:
  Tensor<T> to_map(const Tensor<T>& tokens, std::size_t B, std::size_t g) const {
    return permute(reshape(tokens, {B, g, g, dim}), {0, 3, 1, 2});
  }
  Tensor<T> to_tokens(const Tensor<T>& map, std::size_t B, std::size_t g) const {
    return permute(reshape(map, {B, dim, g * g}), {0, 2, 1});
  }
};

// One masked cross-attention round of the localization decoder.
template <typename T>
struct QueryDecoderRound {
  LayerNormParams<T> norm_q, norm_mlp;
  Linear<T> q, k, v, proj, fc1, fc2;
  std::size_t heads = 4, head_dim = 16;

  QueryDecoderRound() = default;
  QueryDecoderRound(std::size_t dim, std::size_t heads_in, T eps, Rng& rng)
      : norm_q(dim, eps),
        norm_mlp(dim, eps),
        q(dim, dim, rng),
        k(dim, dim, rng),
        v(dim, dim, rng),
        proj(dim, dim, rng),
        fc1(dim, 2 * dim, rng),
        fc2(2 * dim, dim, rng),
        heads(heads_in),
        head_dim(dim / heads_in) {}

  // query [B,1,D], memory [B,N,D], bias [B,N] additive attention bias
  // (0 for visible positions, a large negative number for masked ones).
  Tensor<T> forward(const Tensor<T>& query, const Tensor<T>& memory,
                    const Tensor<T>& bias) const {
    const std::size_t B = memory.dim(0), N = memory.dim(1), D = memory.dim(2);
    auto qn = norm_q.forward(query);
    auto qh = permute(reshape(q.forward(qn), {B, 1, heads, head_dim}), {0, 2, 1, 3});
    auto kh = permute(reshape(k.forward(memory), {B, N, heads, head_dim}), {0, 2, 1, 3});
    auto vh = permute(reshape(v.forward(memory), {B, N, heads, head_dim}), {0, 2, 1, 3});
    auto scores = scale(matmul(qh, permute(kh, {0, 1, 3, 2})),
                        static_cast<T>(1.0 / std::sqrt(double(head_dim))));  // [B,h,1,N]
    scores = add(scores, expand(reshape(bias, {B, 1, 1, N}), {B, heads, 1, N}));
    auto attn = softmax_lastdim(scores);
    auto ctx = reshape(permute(matmul(attn, vh), {0, 2, 1, 3}), {B, 1, D});
    auto updated = add(query, proj.forward(ctx));
    return add(updated, fc2.forward(gelu(fc1.forward(norm_mlp.forward(updated)))));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    norm_q.collect(out, prefix + ".norm_q");
    norm_mlp.collect(out, prefix + ".norm_mlp");
    q.collect(out, prefix + ".q");
    k.collect(out, prefix + ".k");
    v.collect(out, prefix + ".v");
    proj.collect(out, prefix + ".proj");
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

// Localization decoder: a single learnable query refined over the coarse
// pyramid levels with masked cross-attention, followed by a dot-product mask
// prediction against the full-resolution feature map.
template <typename T>
struct QueryDecoder {
  Tensor<T> query;  // [1, D] - exactly one query embedding
  std::vector<QueryDecoderRound<T>> rounds;
  Linear<T> mask_embed;
  std::size_t rounds_count = 3;
  T mask_logit_threshold = T(0);  // logit-space threshold for masking

  QueryDecoder() = default;
  QueryDecoder(const ModelConfig& cfg, Rng& rng) : rounds_count(cfg.decoder_rounds) {
    const std::size_t D = cfg.decoder_dim;
    query = Tensor<T>::uniform({1, D}, rng, T(-0.1), T(0.1), true);
    for (std::size_t r = 0; r < rounds_count; ++r) {
      rounds.emplace_back(D, cfg.decoder_heads, static_cast<T>(cfg.ln_eps), rng);
    }
    mask_embed = Linear<T>(D, D, rng);
    const double thr = cfg.decoder_mask_threshold;
    mask_logit_threshold = static_cast<T>(std::log(thr / (1.0 - thr)));
  }

  // Per-pixel dot product between the projected query and pixel features,
  // upsampled to the requested output resolution. Returns logits.
  Tensor<T> predict_mask(const Tensor<T>& q, const Tensor<T>& fullres, std::size_t grid,
                         std::size_t out_h, std::size_t out_w) const {
    const std::size_t B = fullres.dim(0);
    auto e = mask_embed.forward(q);                                  // [B,1,D]
    auto logits = matmul(fullres, permute(e, {0, 2, 1}));            // [B,N,1]
    auto map = reshape(permute(logits, {0, 2, 1}), {B, 1, grid, grid});
    return resize_bilinear(map, out_h, out_w);
  }

  // Additive attention bias from previous-round mask logits resampled to the
  // level grid. Computed on detached values: the thresholding step carries no
  // gradient. If every position of a batch element is masked, the mask is
  // dropped for that element.
  Tensor<T> mask_bias(const Tensor<T>& prev_logits, std::size_t level_grid) const {
    NoGradGuard no_grad;
    const std::size_t B = prev_logits.dim(0);
    auto resampled = resize_bilinear(prev_logits, level_grid, level_grid);
    const std::size_t N = level_grid * level_grid;
    std::vector<T> bias(B * N, T(0));
    const auto& v = resampled.value();
    for (std::size_t b = 0; b < B; ++b) {
      bool any_visible = false;
      for (std::size_t i = 0; i < N; ++i) {
        if (v[b * N + i] > mask_logit_threshold) {
          any_visible = true;
        } else {
          bias[b * N + i] = T(-1e30);
        }
      }
      if (!any_visible) {
        for (std::size_t i = 0; i < N; ++i) bias[b * N + i] = T(0);
      }
    }
    return Tensor<T>::from_data({B, N}, std::move(bias));
  }

  // level_tokens: pixel-decoder outputs per level; rounds walk the coarse
  // levels from coarsest down, the first round unmasked. Output logits are at
  // (out_h, out_w).
  Tensor<T> forward(const std::vector<Tensor<T>>& level_tokens, const Tensor<T>& fullres,
                    const ModelConfig& cfg, std::size_t out_h, std::size_t out_w) const {
    const std::size_t B = fullres.dim(0);
    const std::size_t D = query.dim(1);
    auto q = expand(reshape(query, {1, 1, D}), {B, 1, D});
    Tensor<T> logits;  // previous round's prediction, full resolution
    for (std::size_t r = 0; r < rounds_count; ++r) {
      const std::size_t level = ModelConfig::kLevels - 1 - r;
      const std::size_t grid = cfg.level_grid(level);
      Tensor<T> bias = logits.defined()
                           ? mask_bias(logits, grid)
                           : Tensor<T>::zeros({B, grid * grid});
      q = rounds[r].forward(q, level_tokens[level], bias);
      logits = predict_mask(q, fullres, cfg.patch_grid(), out_h, out_w);
    }
    return logits;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    collect_param(out, prefix + ".query", query, false);
    for (std::size_t r = 0; r < rounds.size(); ++r) {
      rounds[r].collect(out, prefix + ".round" + std::to_string(r + 1));
    }
    mask_embed.collect(out, prefix + ".mask_embed");
  }
};

}  // namespace imlkit
