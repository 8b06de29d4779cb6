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
#include <vector>

#include "imlkit/config.hpp"
#include "imlkit/nn.hpp"
#include "imlkit/tensor.hpp"

namespace imlkit {

// Stride-p patch embedding with trainable positional table. The embedding
// convolution and norm freeze with the backbone; the positional table stays
// trainable.
template <typename T>
struct PatchEmbedder {
  Tensor<T> conv_weight, conv_bias;  // [C',3,p,p], [C']
  LayerNormParams<T> norm;
  Tensor<T> pos_embed;  // [(H'xW'), C']
  std::size_t patch = 4;

  PatchEmbedder() = default;
  PatchEmbedder(const ModelConfig& cfg, Rng& rng) : patch(cfg.patch_size) {
    const std::size_t C = cfg.embed_dim;
    const T s = static_cast<T>(1.0 / std::sqrt(double(3 * patch * patch)));
    conv_weight = Tensor<T>::uniform({C, 3, patch, patch}, rng, -s, s, true);
    conv_bias = Tensor<T>::uniform({C}, rng, -s, s, true);
    norm = LayerNormParams<T>(C, static_cast<T>(cfg.ln_eps));
    const std::size_t n = cfg.patch_grid() * cfg.patch_grid();
    pos_embed = Tensor<T>::uniform({n, C}, rng, T(-0.02), T(0.02), true);
  }

  // [B,3,H,W] -> [B, H'xW', C']
  Tensor<T> forward(const Tensor<T>& image) const {
    const std::size_t B = image.dim(0), H = image.dim(2), W = image.dim(3);
    if (H % patch != 0 || W % patch != 0) {
      throw std::invalid_argument("patch_embed: image " + std::to_string(H) + "x" +
                                  std::to_string(W) + " not divisible by patch size " +
                                  std::to_string(patch));
    }
    const std::size_t C = conv_weight.dim(0);
    const std::size_t Hp = H / patch, Wp = W / patch;
    auto y = conv2d(image, conv_weight, patch, 0);  // [B,C,Hp,Wp]
    y = add(y, expand(reshape(conv_bias, {1, C, 1, 1}), {B, C, Hp, Wp}));
    auto tokens = permute(reshape(y, {B, C, Hp * Wp}), {0, 2, 1});
    tokens = norm.forward(tokens);
    return add(tokens, expand(reshape(pos_embed, {1, Hp * Wp, C}), {B, Hp * Wp, C}));
  }

  void collect(ParamList<T>& out, const std::string& prefix, bool frozen) const {
    // Positional table never freezes.
    collect_param(out, prefix + ".conv_weight", conv_weight, frozen);
    collect_param(out, prefix + ".conv_bias", conv_bias, frozen);
    norm.collect(out, prefix + ".norm", frozen);
    collect_param(out, prefix + ".pos_embed", pos_embed, false);
  }
};

// One learnable prompt group per semantic block, always trainable.
template <typename T>
struct PromptBank {
  // groups[level][block]: [n_p, C_level]
  std::vector<std::vector<Tensor<T>>> groups;

  PromptBank() = default;
  PromptBank(const ModelConfig& cfg, Rng& rng) {
    groups.resize(ModelConfig::kLevels);
    for (std::size_t lv = 0; lv < ModelConfig::kLevels; ++lv) {
      const std::size_t C = cfg.level_channels(lv);
      for (std::size_t b = 0; b < cfg.depths[lv]; ++b) {
        groups[lv].push_back(Tensor<T>::uniform({cfg.prompts_per_window, C}, rng,
                                                static_cast<T>(-cfg.prompt_init_range),
                                                static_cast<T>(cfg.prompt_init_range), true));
      }
    }
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t lv = 0; lv < groups.size(); ++lv) {
      for (std::size_t b = 0; b < groups[lv].size(); ++b) {
        collect_param(out,
                      prefix + ".l" + std::to_string(lv + 1) + ".b" + std::to_string(b),
                      groups[lv][b], false);
      }
    }
  }
};

// Hierarchical windowed-attention backbone: four levels of blocks with patch
// merging in between. Shared by both branches; the semantic instance injects
// prompts and freezes, the high-frequency one trains from scratch.
template <typename T>
struct BackboneStages {
  std::vector<std::vector<TransformerBlock<T>>> blocks;  // [level][block]
  std::vector<PatchMerge<T>> merges;                     // between levels, 3 entries
  std::size_t window = 4;

  BackboneStages() = default;
  BackboneStages(const ModelConfig& cfg, Rng& rng) : window(cfg.window) {
    blocks.resize(ModelConfig::kLevels);
    for (std::size_t lv = 0; lv < ModelConfig::kLevels; ++lv) {
      const std::size_t C = cfg.level_channels(lv);
      for (std::size_t b = 0; b < cfg.depths[lv]; ++b) {
        blocks[lv].emplace_back(C, cfg.head_dim, cfg.mlp_ratio, static_cast<T>(cfg.ln_eps), rng);
      }
    }
    for (std::size_t lv = 0; lv + 1 < ModelConfig::kLevels; ++lv) {
      merges.emplace_back(cfg.level_channels(lv), static_cast<T>(cfg.ln_eps), rng);
    }
  }

  // Runs the blocks of one level. `prompts`, when given, supplies one group
  // per block; alternating blocks use a shifted window partition.
  Tensor<T> run_level(std::size_t level, const Tensor<T>& tokens, std::size_t grid,
                      const std::vector<Tensor<T>>* prompts = nullptr) const {
    Tensor<T> x = tokens;
    for (std::size_t b = 0; b < blocks[level].size(); ++b) {
      const bool shifted = (b % 2 == 1);
      const Tensor<T>* group = prompts ? &(*prompts)[b] : nullptr;
      Tensor<T> batched_prompts;
      if (group) {
        const std::size_t B = x.dim(0), np = group->dim(0), C = group->dim(1);
        batched_prompts = expand(reshape(*group, {1, np, C}), {B, np, C});
      }
      auto res = block_forward_windowed(blocks[level][b], x, grid, grid, window, shifted,
                                        group ? &batched_prompts : nullptr);
      x = res.tokens;  // averaged prompt outputs are not propagated
    }
    return x;
  }

  Tensor<T> merge_level(std::size_t level, const Tensor<T>& tokens, std::size_t grid) const {
    return merges[level].forward(tokens, grid, grid);
  }

  void collect(ParamList<T>& out, const std::string& prefix, bool frozen) const {
    for (std::size_t lv = 0; lv < blocks.size(); ++lv) {
      for (std::size_t b = 0; b < blocks[lv].size(); ++b) {
        blocks[lv][b].collect(
            out, prefix + ".l" + std::to_string(lv + 1) + ".b" + std::to_string(b), frozen);
      }
    }
    for (std::size_t lv = 0; lv < merges.size(); ++lv) {
      merges[lv].collect(out, prefix + ".merge" + std::to_string(lv + 1), frozen);
    }
  }
};

}  // namespace imlkit
