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

#include <string>
#include <utility>
#include <vector>

#include "imlkit/config.hpp"
#include "imlkit/nn.hpp"
#include "imlkit/tensor.hpp"

namespace imlkit {

template <typename T>
struct GateSet {
  Tensor<T> channel_sem, channel_hfq;  // [B, C]
  Tensor<T> spatial_sem, spatial_hfq;  // [B, N]
};

// Pool both features, concatenate, two-layer MLP, split, sigmoid.
template <typename T>
struct ChannelAttention {
  Linear<T> fc1, fc2;

  ChannelAttention() = default;
  ChannelAttention(std::size_t dim, Rng& rng) : fc1(2 * dim, dim, rng), fc2(dim, 2 * dim, rng) {}

  // Inputs [B, N, C]; gates [B, C] each, strictly inside (0, 1).
  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& f_sem, const Tensor<T>& f_hfq) const {
    if (f_sem.shape() != f_hfq.shape()) {
      throw std::invalid_argument("channel_attention: feature shapes differ, " +
                                  shape_str(f_sem.shape()) + " vs " + shape_str(f_hfq.shape()));
    }
    const std::size_t C = f_sem.dim(2);
    auto pooled = concat<T>({mean_axis(f_sem, 1), mean_axis(f_hfq, 1)}, 1);  // [B, 2C]
    auto gates = sigmoid(fc2.forward(relu(fc1.forward(pooled))));
    return {slice(gates, 1, 0, C), slice(gates, 1, C, C)};
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

// Channel concat, 1x1 conv, ReLU, 1x1 conv to two maps, split, sigmoid.
// 1x1 convolutions over the token grid are per-token linears.
template <typename T>
struct SpatialAttention {
  Linear<T> conv1, conv2;

  SpatialAttention() = default;
  SpatialAttention(std::size_t dim, Rng& rng) : conv1(2 * dim, dim, rng), conv2(dim, 2, rng) {}

  // Inputs [B, N, C]; gates [B, N] each.
  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& f_sem, const Tensor<T>& f_hfq) const {
    if (f_sem.shape() != f_hfq.shape()) {
      throw std::invalid_argument("spatial_attention: feature shapes differ, " +
                                  shape_str(f_sem.shape()) + " vs " + shape_str(f_hfq.shape()));
    }
    const std::size_t B = f_sem.dim(0), N = f_sem.dim(1);
    auto cat = concat<T>({f_sem, f_hfq}, 2);                      // [B, N, 2C]
    auto maps = sigmoid(conv2.forward(relu(conv1.forward(cat))));  // [B, N, 2]
    auto w_s = reshape(slice(maps, 2, 0, 1), {B, N});
    auto w_h = reshape(slice(maps, 2, 1, 1), {B, N});
    return {w_s, w_h};
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    conv1.collect(out, prefix + ".conv1");
    conv2.collect(out, prefix + ".conv2");
  }
};

// Crosswise residual exchange: each branch receives the other branch's
// feature weighted by that branch's channel and spatial gates.
template <typename T>
inline std::pair<Tensor<T>, Tensor<T>> align_features(const Tensor<T>& f_sem,
                                                      const Tensor<T>& f_hfq,
                                                      const GateSet<T>& gates) {
  const std::size_t B = f_sem.dim(0), N = f_sem.dim(1), C = f_sem.dim(2);
  auto channel_term = [&](const Tensor<T>& gate, const Tensor<T>& feat) {
    return mul(expand(reshape(gate, {B, 1, C}), {B, N, C}), feat);
  };
  auto spatial_term = [&](const Tensor<T>& gate, const Tensor<T>& feat) {
    return mul(expand(reshape(gate, {B, N, 1}), {B, N, C}), feat);
  };
  auto sem_out = add(f_sem, add(channel_term(gates.channel_hfq, f_hfq),
                                spatial_term(gates.spatial_hfq, f_hfq)));
  auto hfq_out = add(f_hfq, add(channel_term(gates.channel_sem, f_sem),
                                spatial_term(gates.spatial_sem, f_sem)));
  return {sem_out, hfq_out};
}

// Single-scale deformable attention. Every query takes its own grid location
// as reference point, predicts per-head point offsets and softmax weights,
// samples the value map bilinearly and mixes the heads back together.
template <typename T>
struct DeformableAttention {
  Linear<T> offset_pred, weight_pred, value_proj, out_proj;
  Tensor<T> offset_scale;  // [heads], pixel units
  std::size_t heads = 2, points = 4;

  DeformableAttention() = default;
  DeformableAttention(std::size_t dim, std::size_t heads_in, std::size_t points_in,
                      double offset_scale_init, Rng& rng)
      : offset_pred(dim, heads_in * points_in * 2, rng),
        weight_pred(dim, heads_in * points_in, rng),
        value_proj(dim, dim, rng),
        out_proj(dim, dim, rng),
        heads(heads_in),
        points(points_in) {
    offset_scale = Tensor<T>::full({heads_in}, static_cast<T>(offset_scale_init), true);
  }

  // query, value: [B, N, C] on an H x W grid.
  Tensor<T> forward(const Tensor<T>& query, const Tensor<T>& value, std::size_t H,
                    std::size_t W) const {
    if (query.shape() != value.shape()) {
      throw std::invalid_argument("deformable_attention: query/value shapes differ");
    }
    const std::size_t B = query.dim(0), N = query.dim(1), C = query.dim(2);
    if (N != H * W) throw std::invalid_argument("deformable_attention: grid mismatch");
    const std::size_t dh = C / heads;

    auto offsets = reshape(offset_pred.forward(query), {B, N, heads, points, 2});
    auto weights = softmax_lastdim(reshape(weight_pred.forward(query), {B, N, heads, points}));
    // [B, heads, dh, H, W] value planes
    auto v = permute(reshape(value_proj.forward(value), {B, H, W, heads, dh}), {0, 3, 4, 1, 2});

    // Reference points: each query's own (x, y) grid coordinate.
    std::vector<T> ref;
    ref.reserve(N * 2);
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        ref.push_back(static_cast<T>(x));
        ref.push_back(static_cast<T>(y));
      }
    }
    auto ref_points = Tensor<T>::from_data({N, 1, 2}, std::move(ref));

    std::vector<Tensor<T>> batch_out;
    batch_out.reserve(B);
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<Tensor<T>> head_out;
      head_out.reserve(heads);
      for (std::size_t h = 0; h < heads; ++h) {
        auto plane = reshape(slice(slice(v, 0, b, 1), 1, h, 1), {dh, H, W});
        auto off = reshape(slice(slice(offsets, 0, b, 1), 2, h, 1), {N, points, 2});
        auto scl = expand(reshape(slice(offset_scale, 0, h, 1), {1, 1, 1}), {N, points, 2});
        auto pts = add(expand(ref_points, {N, points, 2}), mul(off, scl));
        auto sampled = bilinear_sample(plane, reshape(pts, {N * points, 2}));  // [N*points, dh]
        auto w = reshape(slice(slice(weights, 0, b, 1), 2, h, 1), {N, points, 1});
        auto mixed = sum_axis(mul(reshape(sampled, {N, points, dh}), expand(w, {N, points, dh})),
                              1);  // [N, dh]
        head_out.push_back(mixed);
      }
      batch_out.push_back(reshape(concat<T>(head_out, 1), {1, N, C}));
    }
    auto attn = B == 1 ? batch_out[0] : concat<T>(batch_out, 0);
    return out_proj.forward(attn);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    offset_pred.collect(out, prefix + ".offset_pred");
    weight_pred.collect(out, prefix + ".weight_pred");
    value_proj.collect(out, prefix + ".value_proj");
    out_proj.collect(out, prefix + ".out_proj");
    collect_param(out, prefix + ".offset_scale", offset_scale, false);
  }
};

// Per-level alignment and fusion. Fusion mixes the two branches through a
// pair of deformable attentions and the learnable scalars gamma1/gamma2.
template <typename T>
struct FafLevel {
  ChannelAttention<T> channel;
  SpatialAttention<T> spatial;
  DeformableAttention<T> dfa_sem_query, dfa_hfq_query;
  Tensor<T> gamma1, gamma2;

  FafLevel() = default;
  FafLevel(std::size_t dim, const ModelConfig& cfg, Rng& rng)
      : channel(dim, rng),
        spatial(dim, rng),
        dfa_sem_query(dim, cfg.faf_heads, cfg.faf_points, cfg.faf_offset_scale_init, rng),
        dfa_hfq_query(dim, cfg.faf_heads, cfg.faf_points, cfg.faf_offset_scale_init, rng) {
    gamma1 = Tensor<T>::full({1}, T(0.5), true);
    gamma2 = Tensor<T>::full({1}, T(0.5), true);
  }

  GateSet<T> gates(const Tensor<T>& f_sem, const Tensor<T>& f_hfq) const {
    GateSet<T> g;
    auto cg = channel.forward(f_sem, f_hfq);
    g.channel_sem = cg.first;
    g.channel_hfq = cg.second;
    auto sg = spatial.forward(f_sem, f_hfq);
    g.spatial_sem = sg.first;
    g.spatial_hfq = sg.second;
    return g;
  }

  std::pair<Tensor<T>, Tensor<T>> align(const Tensor<T>& f_sem, const Tensor<T>& f_hfq) const {
    return align_features(f_sem, f_hfq, gates(f_sem, f_hfq));
  }

  // F_d = gamma1*(F_sem + DFA(q=sem, v=hfq)) + gamma2*(F_hfq + DFA(q=hfq, v=sem))
  Tensor<T> fuse(const Tensor<T>& f_sem, const Tensor<T>& f_hfq, std::size_t H,
                 std::size_t W) const {
    auto attn_s = dfa_sem_query.forward(f_sem, f_hfq, H, W);
    auto attn_h = dfa_hfq_query.forward(f_hfq, f_sem, H, W);
    auto left = mul(expand(gamma1, f_sem.shape()), add(f_sem, attn_s));
    auto right = mul(expand(gamma2, f_hfq.shape()), add(f_hfq, attn_h));
    return add(left, right);
  }

  void collect(ParamList<T>& out, const std::string& prefix, bool with_align,
               bool with_fuse) const {
    if (with_align) {
      channel.collect(out, prefix + ".channel");
      spatial.collect(out, prefix + ".spatial");
    }
    if (with_fuse) {
      dfa_sem_query.collect(out, prefix + ".dfa_sem_query");
      dfa_hfq_query.collect(out, prefix + ".dfa_hfq_query");
      collect_param(out, prefix + ".gamma1", gamma1, false);
      collect_param(out, prefix + ".gamma2", gamma2, false);
    }
  }
};

}  // namespace imlkit
