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
#include "imlkit/decoder.hpp"
#include "imlkit/faf.hpp"
#include "imlkit/highfreq.hpp"
#include "imlkit/nn.hpp"
#include "imlkit/semantic.hpp"
#include "imlkit/sha256.hpp"
#include "imlkit/tensor.hpp"

namespace imlkit {

// Dual-branch localization model. The semantic branch is frozen after
// initialization (or after the toy pre-train) and adapted only through its
// prompt groups and positional table; the high-frequency branch, alignment /
// fusion modules and the decoder train from scratch.
template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    if (cfg_.use_sem) {
      Rng r_embed = rng.fork(1);
      Rng r_backbone = rng.fork(2);
      Rng r_prompts = rng.fork(3);
      embed_ = PatchEmbedder<T>(cfg_, r_embed);
      backbone_ = BackboneStages<T>(cfg_, r_backbone);
      prompts_ = PromptBank<T>(cfg_, r_prompts);
    }
    if (cfg_.use_hp) {
      Rng r_hfq = rng.fork(4);
      hfq_ = HfqBranch<T>(cfg_, r_hfq);
    }
    if (cfg_.use_sem && cfg_.use_hp && (cfg_.use_align || cfg_.use_fuse)) {
      Rng r_faf = rng.fork(5);
      for (std::size_t lv = 0; lv < ModelConfig::kLevels; ++lv) {
        faf_.emplace_back(cfg_.level_channels(lv), cfg_, r_faf);
      }
    }
    Rng r_pix = rng.fork(6);
    Rng r_dec = rng.fork(7);
    pixel_decoder_ = PixelDecoder<T>(cfg_, r_pix);
    query_decoder_ = QueryDecoder<T>(cfg_, r_dec);
  }

  const ModelConfig& config() const { return cfg_; }

  // Marks the semantic backbone (embedding conv + norm, blocks, merges) as
  // untrainable. The positional table and prompt groups stay trainable.
  void freeze_backbone() {
    backbone_frozen_ = true;
    for (auto& p : params()) {
      if (p.frozen) p.tensor.set_requires_grad(false);
    }
  }

  bool backbone_frozen() const { return backbone_frozen_; }

  void set_prompts_enabled(bool enabled) { prompts_enabled_ = enabled; }

  struct ForwardTrace {
    std::vector<Tensor<T>> sem_levels;   // post-alignment when align is active
    std::vector<Tensor<T>> hfq_levels;   // post-alignment when align is active
    std::vector<Tensor<T>> fused;        // decoder input pyramid
    Tensor<T> logits;                    // [B, 1, H, W]
  };

  // images: [B, 3, H, W] in normalized floating point.
  ForwardTrace forward_trace(const Tensor<T>& images) const {
    const std::size_t H = images.dim(2), W = images.dim(3);
    if (H != cfg_.image_size || W != cfg_.image_size) {
      throw std::invalid_argument("model: input " + std::to_string(H) + "x" + std::to_string(W) +
                                  " does not match configured size " +
                                  std::to_string(cfg_.image_size));
    }
    ForwardTrace trace;
    Tensor<T> sem, hfq;
    if (cfg_.use_sem) sem = embed_.forward(images);
    if (cfg_.use_hp) hfq = hfq_.stem(images);

    for (std::size_t lv = 0; lv < ModelConfig::kLevels; ++lv) {
      const std::size_t grid = cfg_.level_grid(lv);
      if (cfg_.use_sem) {
        const auto* groups = prompts_enabled_ ? &prompts_.groups[lv] : nullptr;
        sem = backbone_.run_level(lv, sem, grid, groups);
      }
      if (cfg_.use_hp) hfq = hfq_.run_level(lv, hfq, grid);

      if (cfg_.use_sem && cfg_.use_hp && cfg_.use_align) {
        auto aligned = faf_[lv].align(sem, hfq);
        sem = aligned.first;
        hfq = aligned.second;
      }
      if (cfg_.use_sem) trace.sem_levels.push_back(sem);
      if (cfg_.use_hp) trace.hfq_levels.push_back(hfq);

      Tensor<T> fused;
      if (cfg_.use_sem && cfg_.use_hp) {
        fused = cfg_.use_fuse ? faf_[lv].fuse(sem, hfq, grid, grid) : add(sem, hfq);
      } else {
        fused = cfg_.use_sem ? sem : hfq;
      }
      trace.fused.push_back(fused);

      if (lv + 1 < ModelConfig::kLevels) {
        if (cfg_.use_sem) sem = backbone_.merge_level(lv, sem, grid);
        if (cfg_.use_hp) hfq = hfq_.merge_level(lv, hfq, grid);
      }
    }

    auto pix = pixel_decoder_.forward(trace.fused, cfg_);
    trace.logits = query_decoder_.forward(pix.level_tokens, pix.fullres, cfg_, H, W);
    return trace;
  }

  Tensor<T> forward(const Tensor<T>& images) const { return forward_trace(images).logits; }

  ParamList<T> params() const {
    ParamList<T> out;
    if (cfg_.use_sem) {
      embed_.collect(out, "sem.embed", backbone_frozen_);
      backbone_.collect(out, "sem.backbone", backbone_frozen_);
      prompts_.collect(out, "sem.prompts");
    }
    if (cfg_.use_hp) hfq_.collect(out, "hfq");
    for (std::size_t lv = 0; lv < faf_.size(); ++lv) {
      faf_[lv].collect(out, "faf.l" + std::to_string(lv + 1), cfg_.use_align, cfg_.use_fuse);
    }
    pixel_decoder_.collect(out, "pixdec");
    query_decoder_.collect(out, "querydec");
    return out;
  }

  // Fingerprint of every frozen weight, in declaration order.
  std::string backbone_checksum() const {
    Sha256 h;
    for (const auto& p : params()) {
      if (!p.frozen) continue;
      h.update(p.name.data(), p.name.size());
      h.update(p.tensor.value().data(), p.tensor.value().size() * sizeof(T));
    }
    return h.hex_digest();
  }

  // Re-applies the high-pass kernel constraints; called after every optimizer
  // step and after loading a checkpoint.
  void project_constraints() {
    if (cfg_.use_hp) hfq_.bank.project();
  }

  PatchEmbedder<T>& embed() { return embed_; }
  BackboneStages<T>& backbone() { return backbone_; }
  PromptBank<T>& prompts() { return prompts_; }
  HfqBranch<T>& hfq() { return hfq_; }
  std::vector<FafLevel<T>>& faf() { return faf_; }
  PixelDecoder<T>& pixel_decoder() { return pixel_decoder_; }
  QueryDecoder<T>& query_decoder() { return query_decoder_; }
  const HfqBranch<T>& hfq() const { return hfq_; }

 private:
  ModelConfig cfg_;
  PatchEmbedder<T> embed_;
  BackboneStages<T> backbone_;
  PromptBank<T> prompts_;
  HfqBranch<T> hfq_;
  std::vector<FafLevel<T>> faf_;
  PixelDecoder<T> pixel_decoder_;
  QueryDecoder<T> query_decoder_;
  bool backbone_frozen_ = false;
  bool prompts_enabled_ = true;
};

}  // namespace imlkit
