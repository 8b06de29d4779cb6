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

#include <array>
#include <string>
#include <vector>

#include "imlkit/config.hpp"
#include "imlkit/nn.hpp"
#include "imlkit/semantic.hpp"
#include "imlkit/tensor.hpp"

namespace imlkit {

// Bank of constraint-projected high-pass kernels at three sizes. After
// projection every kernel slice predicts its center pixel from the
// neighborhood: center tap -1, off-center taps summing to 1.
template <typename T>
struct BayarKernelBank {
  static constexpr std::array<std::size_t, 3> kSizes = {3, 5, 7};
  std::array<Tensor<T>, 3> kernels;  // each [C'/3, 3, k, k]

  BayarKernelBank() = default;
  BayarKernelBank(std::size_t out_channels, Rng& rng) {
    const std::size_t per_size = out_channels / 3;
    for (std::size_t i = 0; i < 3; ++i) {
      const std::size_t k = kSizes[i];
      const T s = static_cast<T>(1.0 / std::sqrt(double(3 * k * k)));
      kernels[i] = Tensor<T>::uniform({per_size, 3, k, k}, rng, -s, s, true);
    }
    project();
  }

  // Center tap forced to exactly -1; off-center taps rescaled so they sum to
  // 1 per (output, input) slice, or reset to uniform when the current sum is
  // too close to zero to renormalize. The rescale runs in double and patches
  // the rounding residual into the largest tap, so the invariant holds to
  // 1e-6 even in single precision.
  void project() {
    for (std::size_t i = 0; i < 3; ++i) {
      const std::size_t k = kSizes[i];
      const std::size_t center = (k / 2) * k + (k / 2);
      const std::size_t taps = k * k;
      auto& data = kernels[i].value();
      const std::size_t slices = data.size() / taps;
      for (std::size_t s = 0; s < slices; ++s) {
        T* slice = data.data() + s * taps;
        double off_sum = 0.0;
        for (std::size_t t = 0; t < taps; ++t) {
          if (t != center) off_sum += double(slice[t]);
        }
        if (std::abs(off_sum) > 1e-8) {
          const double inv = 1.0 / off_sum;
          for (std::size_t t = 0; t < taps; ++t) {
            if (t != center) slice[t] = static_cast<T>(double(slice[t]) * inv);
          }
          for (int pass = 0; pass < 2; ++pass) {
            double new_sum = 0.0;
            std::size_t largest = center == 0 ? 1 : 0;
            for (std::size_t t = 0; t < taps; ++t) {
              if (t == center) continue;
              new_sum += double(slice[t]);
              if (std::abs(slice[t]) > std::abs(slice[largest])) largest = t;
            }
            slice[largest] = static_cast<T>(double(slice[largest]) + (1.0 - new_sum));
          }
        } else {
          const T uniform = T(1) / static_cast<T>(taps - 1);
          for (std::size_t t = 0; t < taps; ++t) {
            if (t != center) slice[t] = uniform;
          }
        }
        slice[center] = T(-1);
      }
    }
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < 3; ++i) {
      collect_param(out, prefix + ".k" + std::to_string(kSizes[i]), kernels[i], false);
    }
  }
};

// High-frequency branch: the constrained stem plus a backbone mirroring the
// semantic branch's layer structure (own weights, no prompts, trainable).
template <typename T>
struct HfqBranch {
  BayarKernelBank<T> bank;
  Tensor<T> agg_weight, agg_bias;  // stride-p reduction to patch resolution
  BackboneStages<T> stages;
  std::size_t patch = 4;

  HfqBranch() = default;
  HfqBranch(const ModelConfig& cfg, Rng& rng)
      : bank(cfg.embed_dim, rng), stages(cfg, rng), patch(cfg.patch_size) {
    const std::size_t C = cfg.embed_dim;
    const T s = static_cast<T>(1.0 / std::sqrt(double(C * patch * patch)));
    agg_weight = Tensor<T>::uniform({C, C, patch, patch}, rng, -s, s, true);
    agg_bias = Tensor<T>::uniform({C}, rng, -s, s, true);
  }

  // Stride-1 same-resolution responses of the three kernel sizes, channel
  // concatenated: [B, C', H, W]. Replicate padding keeps the zero response to
  // constant inputs exact up to the borders.
  Tensor<T> stem_preagg(const Tensor<T>& image) const {
    std::vector<Tensor<T>> outs;
    outs.reserve(3);
    for (std::size_t i = 0; i < 3; ++i) {
      const std::size_t k = BayarKernelBank<T>::kSizes[i];
      const std::size_t r = k / 2;
      auto padded = pad2d(image, r, r, r, r, PadMode::kReplicate);
      outs.push_back(conv2d(padded, bank.kernels[i], 1, 0));
    }
    return concat<T>(outs, 1);
  }

  // [B,3,H,W] -> [B, H'xW', C']
  Tensor<T> stem(const Tensor<T>& image) const {
    const std::size_t B = image.dim(0), H = image.dim(2), W = image.dim(3);
    if (H % patch != 0 || W % patch != 0) {
      throw std::invalid_argument("hfq_stem: image " + std::to_string(H) + "x" +
                                  std::to_string(W) + " not divisible by patch size " +
                                  std::to_string(patch));
    }
    const std::size_t C = agg_weight.dim(0);
    const std::size_t Hp = H / patch, Wp = W / patch;
    auto feat = stem_preagg(image);
    auto y = conv2d(feat, agg_weight, patch, 0);  // [B,C,Hp,Wp]
    y = add(y, expand(reshape(agg_bias, {1, C, 1, 1}), {B, C, Hp, Wp}));
    return permute(reshape(y, {B, C, Hp * Wp}), {0, 2, 1});
  }

  Tensor<T> run_level(std::size_t level, const Tensor<T>& tokens, std::size_t grid) const {
    return stages.run_level(level, tokens, grid, nullptr);
  }

  Tensor<T> merge_level(std::size_t level, const Tensor<T>& tokens, std::size_t grid) const {
    return stages.merge_level(level, tokens, grid);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    bank.collect(out, prefix + ".bayar");
    collect_param(out, prefix + ".agg_weight", agg_weight, false);
    collect_param(out, prefix + ".agg_bias", agg_bias, false);
    stages.collect(out, prefix + ".stages", false);
  }
};

}  // namespace imlkit
