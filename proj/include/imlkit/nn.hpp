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
#include <utility>
#include <vector>

#include "imlkit/rng.hpp"
#include "imlkit/tensor.hpp"

namespace imlkit {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool frozen = false;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
inline void collect_param(ParamList<T>& out, std::string name, const Tensor<T>& t,
                          bool frozen = false) {
  out.push_back(NamedParam<T>{std::move(name), t, frozen});
}

// y = x W + b with W [in, out]. Applies to any [..., in] input.
template <typename T>
struct Linear {
  Tensor<T> weight, bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng) {
    const T s = static_cast<T>(1.0 / std::sqrt(double(in)));
    weight = Tensor<T>::uniform({in, out}, rng, -s, s, true);
    bias = Tensor<T>::uniform({out}, rng, -s, s, true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return add(matmul(x, weight), expand_bias(x, bias));
  }

  void collect(ParamList<T>& out, const std::string& prefix, bool frozen = false) const {
    collect_param(out, prefix + ".weight", weight, frozen);
    collect_param(out, prefix + ".bias", bias, frozen);
  }

 private:
  static Tensor<T> expand_bias(const Tensor<T>& x, const Tensor<T>& b) {
    Shape s = x.shape();
    s.back() = b.size();
    return expand(b, s);
  }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gain, bias;
  T eps = T(1e-5);

  LayerNormParams() = default;
  LayerNormParams(std::size_t dim, T eps_in) : eps(eps_in) {
    gain = Tensor<T>::full({dim}, T(1), true);
    bias = Tensor<T>::zeros({dim}, true);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gain, bias, eps); }

  void collect(ParamList<T>& out, const std::string& prefix, bool frozen = false) const {
    collect_param(out, prefix + ".gain", gain, frozen);
    collect_param(out, prefix + ".bias", bias, frozen);
  }
};

// ---------------------------------------------------------------------------
// token-grid helpers
// ---------------------------------------------------------------------------

// out[i] = in[(i - shift) mod extent] along `axis`.
template <typename T>
inline Tensor<T> roll(const Tensor<T>& x, std::size_t axis, std::ptrdiff_t shift) {
  const std::size_t ext = x.shape()[axis];
  std::size_t s = static_cast<std::size_t>(((shift % std::ptrdiff_t(ext)) + std::ptrdiff_t(ext)) %
                                           std::ptrdiff_t(ext));
  if (s == 0) return x;
  auto head = slice(x, axis, ext - s, s);
  auto tail = slice(x, axis, 0, ext - s);
  return concat<T>({head, tail}, axis);
}

// [B, H*W, C] -> [B*nw, ws*ws, C] over non-overlapping ws x ws windows.
template <typename T>
inline Tensor<T> window_partition(const Tensor<T>& tokens, std::size_t H, std::size_t W,
                                  std::size_t ws) {
  const std::size_t B = tokens.dim(0), C = tokens.dim(2);
  if (tokens.dim(1) != H * W) {
    throw std::invalid_argument("window_partition: token count " + std::to_string(tokens.dim(1)) +
                                " does not form a " + std::to_string(H) + "x" + std::to_string(W) +
                                " grid");
  }
  if (H % ws != 0 || W % ws != 0) {
    throw std::invalid_argument("window_partition: grid " + std::to_string(H) + "x" +
                                std::to_string(W) + " not divisible by window " +
                                std::to_string(ws));
  }
  auto x = reshape(tokens, {B, H / ws, ws, W / ws, ws, C});
  x = permute(x, {0, 1, 3, 2, 4, 5});
  return reshape(x, {B * (H / ws) * (W / ws), ws * ws, C});
}

template <typename T>
inline Tensor<T> window_merge(const Tensor<T>& windows, std::size_t B, std::size_t H,
                              std::size_t W, std::size_t ws) {
  const std::size_t C = windows.dim(2);
  auto x = reshape(windows, {B, H / ws, W / ws, ws, ws, C});
  x = permute(x, {0, 1, 3, 2, 4, 5});
  return reshape(x, {B, H * W, C});
}

// ---------------------------------------------------------------------------
// transformer block
// ---------------------------------------------------------------------------

// Pre-norm windowed block: z = SelfAttn(LN(x)) + x; out = MLP(LN(z)) + z.
template <typename T>
struct TransformerBlock {
  LayerNormParams<T> norm1, norm2;
  Linear<T> q, k, v, proj;
  Linear<T> fc1, fc2;
  std::size_t heads = 1, head_dim = 1;

  TransformerBlock() = default;
  TransformerBlock(std::size_t dim, std::size_t head_dim_in, double mlp_ratio, T eps, Rng& rng)
      : norm1(dim, eps),
        norm2(dim, eps),
        q(dim, dim, rng),
        k(dim, dim, rng),
        v(dim, dim, rng),
        proj(dim, dim, rng),
        fc1(dim, static_cast<std::size_t>(double(dim) * mlp_ratio), rng),
        fc2(static_cast<std::size_t>(double(dim) * mlp_ratio), dim, rng),
        heads(dim / head_dim_in),
        head_dim(head_dim_in) {}

  // x: [Bw, L, C]
  Tensor<T> forward(const Tensor<T>& x) const {
    const std::size_t Bw = x.dim(0), L = x.dim(1), C = x.dim(2);
    auto h = norm1.forward(x);
    auto qh = split_heads(q.forward(h), Bw, L, C);
    auto kh = split_heads(k.forward(h), Bw, L, C);
    auto vh = split_heads(v.forward(h), Bw, L, C);
    auto scores = scale(matmul(qh, permute(kh, {0, 1, 3, 2})),
                        static_cast<T>(1.0 / std::sqrt(double(head_dim))));
    auto attn = softmax_lastdim(scores);
    auto ctx = matmul(attn, vh);  // [Bw, nh, L, dh]
    auto merged = reshape(permute(ctx, {0, 2, 1, 3}), {Bw, L, C});
    auto z = add(proj.forward(merged), x);
    auto h2 = norm2.forward(z);
    return add(fc2.forward(gelu(fc1.forward(h2))), z);
  }

  void collect(ParamList<T>& out, const std::string& prefix, bool frozen = false) const {
    norm1.collect(out, prefix + ".norm1", frozen);
    norm2.collect(out, prefix + ".norm2", frozen);
    q.collect(out, prefix + ".q", frozen);
    k.collect(out, prefix + ".k", frozen);
    v.collect(out, prefix + ".v", frozen);
    proj.collect(out, prefix + ".proj", frozen);
    fc1.collect(out, prefix + ".fc1", frozen);
    fc2.collect(out, prefix + ".fc2", frozen);
  }

 private:
  Tensor<T> split_heads(const Tensor<T>& t, std::size_t Bw, std::size_t L, std::size_t C) const {
    return permute(reshape(t, {Bw, L, heads, head_dim}), {0, 2, 1, 3});
  }
};

// 2x2 neighborhood concat + layer norm + linear reduction: halves the grid,
// doubles the channels.
template <typename T>
struct PatchMerge {
  LayerNormParams<T> norm;
  Linear<T> reduce;

  PatchMerge() = default;
  PatchMerge(std::size_t dim, T eps, Rng& rng) : norm(4 * dim, eps), reduce(4 * dim, 2 * dim, rng) {}

  Tensor<T> forward(const Tensor<T>& tokens, std::size_t H, std::size_t W) const {
    const std::size_t B = tokens.dim(0), C = tokens.dim(2);
    if (tokens.dim(1) != H * W || H % 2 != 0 || W % 2 != 0) {
      throw std::invalid_argument("patch merge requires an even token grid");
    }
    auto x = reshape(tokens, {B, H / 2, 2, W / 2, 2, C});
    x = permute(x, {0, 1, 3, 2, 4, 5});
    x = reshape(x, {B, (H / 2) * (W / 2), 4 * C});
    return reduce.forward(norm.forward(x));
  }

  void collect(ParamList<T>& out, const std::string& prefix, bool frozen = false) const {
    norm.collect(out, prefix + ".norm", frozen);
    reduce.collect(out, prefix + ".reduce", frozen);
  }
};

// ---------------------------------------------------------------------------
// prompt expansion / averaging
// ---------------------------------------------------------------------------

// [B, n_p, C] -> [B*n_w, n_p, C]; every window gets an identical copy.
template <typename T>
inline Tensor<T> expand_prompts(const Tensor<T>& prompts, std::size_t n_w) {
  const std::size_t B = prompts.dim(0), np = prompts.dim(1), C = prompts.dim(2);
  auto x = reshape(prompts, {B, 1, np, C});
  x = expand(x, {B, n_w, np, C});
  return reshape(x, {B * n_w, np, C});
}

// [B*n_w, n_p, C] -> [B, n_p, C] by arithmetic mean over the window copies.
template <typename T>
inline Tensor<T> average_prompts(const Tensor<T>& windows, std::size_t n_w) {
  const std::size_t lead = windows.dim(0);
  if (n_w == 0 || lead % n_w != 0) {
    throw std::invalid_argument("average_prompts: leading extent " + std::to_string(lead) +
                                " not divisible by n_w " + std::to_string(n_w));
  }
  const std::size_t B = lead / n_w, np = windows.dim(1), C = windows.dim(2);
  auto x = reshape(windows, {B, n_w, np, C});
  return mean_axis(x, 1);
}

// Runs one block over windowed tokens, optionally prepending a prompt group
// to every window. Returns the image tokens and, when prompts are given, the
// window-averaged prompt outputs.
template <typename T>
struct WindowedBlockResult {
  Tensor<T> tokens;
  Tensor<T> prompt_out;  // undefined when no prompts were injected
};

template <typename T>
inline WindowedBlockResult<T> block_forward_windowed(const TransformerBlock<T>& block,
                                                     const Tensor<T>& tokens, std::size_t H,
                                                     std::size_t W, std::size_t window,
                                                     bool shifted,
                                                     const Tensor<T>* prompts = nullptr) {
  const std::size_t B = tokens.dim(0), C = tokens.dim(2);
  const std::size_t ws = std::min({window, H, W});
  const std::size_t shift = (shifted && (H > ws || W > ws)) ? ws / 2 : 0;

  Tensor<T> x = tokens;
  if (shift) {
    auto grid = reshape(x, {B, H, W, C});
    grid = roll(grid, 1, -std::ptrdiff_t(shift));
    grid = roll(grid, 2, -std::ptrdiff_t(shift));
    x = reshape(grid, {B, H * W, C});
  }
  const std::size_t n_w = (H / ws) * (W / ws);
  auto xw = window_partition(x, H, W, ws);  // [B*nw, ws*ws, C]
  const std::size_t img_len = ws * ws;

  std::size_t np = 0;
  if (prompts) {
    np = prompts->dim(1);
    auto pw = expand_prompts(*prompts, n_w);
    xw = concat<T>({pw, xw}, 1);
  }

  auto y = block.forward(xw);

  WindowedBlockResult<T> result;
  Tensor<T> img = prompts ? slice(y, 1, np, img_len) : y;
  if (prompts) {
    result.prompt_out = average_prompts(slice(y, 1, 0, np), n_w);
  }
  Tensor<T> merged = window_merge(img, B, H, W, ws);
  if (shift) {
    auto grid = reshape(merged, {B, H, W, C});
    grid = roll(grid, 1, std::ptrdiff_t(shift));
    grid = roll(grid, 2, std::ptrdiff_t(shift));
    merged = reshape(grid, {B, H * W, C});
  }
  result.tokens = merged;
  return result;
}

// Bilinear resize of [B, C, H, W] maps. Corner-aligned so constant maps stay
// constant and no sample ever leaves the source support.
template <typename T>
inline Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t Ho, std::size_t Wo) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H == Ho && W == Wo) return x;
  std::vector<T> pts;
  pts.reserve(Ho * Wo * 2);
  const double sy = Ho > 1 ? double(H - 1) / double(Ho - 1) : 0.0;
  const double sx = Wo > 1 ? double(W - 1) / double(Wo - 1) : 0.0;
  for (std::size_t oy = 0; oy < Ho; ++oy) {
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      pts.push_back(static_cast<T>(ox * sx));
      pts.push_back(static_cast<T>(oy * sy));
    }
  }
  auto points = Tensor<T>::from_data({Ho * Wo, 2}, std::move(pts));
  std::vector<Tensor<T>> per_batch;
  per_batch.reserve(B);
  for (std::size_t b = 0; b < B; ++b) {
    auto map = reshape(slice(x, 0, b, 1), {C, H, W});
    auto sampled = bilinear_sample(map, points);            // [Ho*Wo, C]
    auto chw = permute(reshape(sampled, {Ho, Wo, C}), {2, 0, 1});
    per_batch.push_back(reshape(chw, {1, C, Ho, Wo}));
  }
  return B == 1 ? per_batch[0] : concat<T>(per_batch, 0);
}

}  // namespace imlkit
