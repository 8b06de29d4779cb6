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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "imlkit/config.hpp"
#include "imlkit/dataset.hpp"
#include "imlkit/image.hpp"
#include "imlkit/metrics.hpp"
#include "imlkit/model.hpp"
#include "imlkit/optim.hpp"
#include "imlkit/perturb.hpp"
#include "imlkit/tensor.hpp"

namespace imlkit {

template <typename T>
inline Tensor<T> masks_to_tensor(const std::vector<const ImageU8*>& masks) {
  const std::size_t H = masks[0]->height, W = masks[0]->width;
  Tensor<T> t = Tensor<T>::zeros({masks.size(), 1, H, W});
  auto& v = t.value();
  for (std::size_t b = 0; b < masks.size(); ++b) {
    for (std::size_t i = 0; i < H * W; ++i) {
      v[b * H * W + i] = masks[b]->data[i] ? T(1) : T(0);
    }
  }
  return t;
}

// Per-batch positive-class weight: the negative/positive pixel ratio clamped
// to [1, pos_weight_max]. Small tamper regions would otherwise drown in the
// background loss.
template <typename T>
inline T batch_pos_weight(const Tensor<T>& target, const TrainConfig& cfg) {
  if (cfg.pos_weight_mode == PosWeightMode::kFixed) {
    return static_cast<T>(cfg.pos_weight_fixed);
  }
  std::size_t pos = 0;
  for (auto v : target.value()) pos += (v > T(0.5));
  const std::size_t neg = target.size() - pos;
  if (pos == 0) return T(1);
  const double ratio = double(neg) / double(pos);
  return static_cast<T>(std::clamp(ratio, 1.0, cfg.pos_weight_max));
}

struct TrainLogEntry {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

// Seeded full-batch shuffling, deterministic across runs and platforms.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i-- > 1;) {
    const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, int(i)));
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

// Runs the optimization loop: weighted cross-entropy, AdamW over the
// trainable parameters, warm-up + cosine schedule, high-pass kernel
// re-projection after every step.
template <typename T>
inline std::vector<TrainLogEntry> train_model(Model<T>& model,
                                              const std::vector<LoadedSample>& samples,
                                              const TrainConfig& cfg, std::size_t max_steps = 0) {
  if (samples.empty()) throw DataError("train_model: empty dataset");
  const std::size_t batch = std::min<std::size_t>(cfg.batch_size, samples.size());
  const std::size_t steps_per_epoch = (samples.size() + batch - 1) / batch;
  std::size_t total_steps = max_steps > 0 ? max_steps
                            : cfg.max_steps > 0 ? cfg.max_steps
                                                : cfg.epochs * steps_per_epoch;
  ScheduleSpec sched = ScheduleSpec::from(cfg, total_steps);

  AdamW<T> opt(model.params(), cfg);
  Rng order_rng = Rng(cfg.seed).fork(0x5E11);
  std::vector<TrainLogEntry> log;
  log.reserve(total_steps);

  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  for (std::size_t step = 0; step < total_steps; ++step) {
    if (cursor + batch > order.size()) {
      order = shuffled_indices(samples.size(), order_rng);
      cursor = 0;
      if (order.size() < batch) {
        while (order.size() < batch) order.push_back(order[order.size() % samples.size()]);
      }
    }
    std::vector<const ImageU8*> images, masks;
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& s = samples[order[cursor + b]];
      images.push_back(&s.image);
      masks.push_back(&s.mask);
    }
    cursor += batch;

    auto input = batch_to_tensor<T>(images);
    auto target = masks_to_tensor<T>(masks);
    const T w_pos = batch_pos_weight(target, cfg);

    auto logits = model.forward(input);
    auto loss = weighted_bce_with_logits(logits, target, w_pos, T(1));

    opt.zero_grad();
    backward(loss);
    const double lr = lr_schedule(step, sched);
    opt.step(lr);
    model.project_constraints();

    log.push_back({step, lr, double(loss.item())});
  }
  return log;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
  double f1 = 0.0;   // pooled over all pixels of the split
  double auc = 0.0;
  std::vector<std::vector<double>> probs;  // per sample, row-major H*W
};

template <typename T>
inline EvalResult evaluate(const Model<T>& model, const std::vector<LoadedSample>& samples,
                           std::size_t batch = 4, double threshold = 0.5) {
  if (samples.empty()) throw DataError("evaluate: empty dataset");
  NoGradGuard no_grad;
  EvalResult result;
  std::vector<double> all_scores;
  std::vector<std::uint8_t> all_labels;
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t n = std::min(batch, samples.size() - start);
    std::vector<const ImageU8*> images;
    for (std::size_t b = 0; b < n; ++b) images.push_back(&samples[start + b].image);
    auto logits = model.forward(batch_to_tensor<T>(images));
    const std::size_t pix = logits.size() / n;
    for (std::size_t b = 0; b < n; ++b) {
      std::vector<double> prob(pix);
      for (std::size_t i = 0; i < pix; ++i) {
        const double l = double(logits.value()[b * pix + i]);
        prob[i] = 1.0 / (1.0 + std::exp(-l));
      }
      const auto& mask = samples[start + b].mask;
      for (std::size_t i = 0; i < pix; ++i) {
        all_scores.push_back(prob[i]);
        all_labels.push_back(mask.data[i]);
      }
      result.probs.push_back(std::move(prob));
    }
  }
  result.f1 = f1_fixed(all_scores, all_labels, threshold);
  result.auc = pixel_auc(all_scores, all_labels);
  return result;
}

// Applies one perturbation to every sample image (masks untouched).
inline std::vector<LoadedSample> perturb_samples(const std::vector<LoadedSample>& samples,
                                                 PerturbKind kind, int severity,
                                                 std::uint64_t seed,
                                                 const PerturbLadders& ladders) {
  std::vector<LoadedSample> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    LoadedSample s;
    s.image = perturb(samples[i].image, kind, severity, Rng(seed).fork(i).next_u64(), ladders);
    s.mask = samples[i].mask;
    out.push_back(std::move(s));
  }
  return out;
}

struct ReportRow {
  std::string dataset;
  std::string perturbation;
  int severity = 0;
  double f1 = 0.0;
  double auc = 0.0;
};

inline void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report: " + path);
  out << "dataset,perturbation,severity,F1,AUC\n";
  out.precision(12);
  for (const auto& r : rows) {
    out << r.dataset << "," << r.perturbation << "," << r.severity << "," << r.f1 << "," << r.auc
        << "\n";
  }
}

// ---------------------------------------------------------------------------
// backbone initialization
// ---------------------------------------------------------------------------

// Small self-supervised reconstruction task standing in for large-scale
// pre-training: the coarsest semantic tokens predict the average color of
// their receptive field through a linear head. Trains the (still unfrozen)
// backbone without prompts, then discards the head.
template <typename T>
inline void toy_pretrain(Model<T>& model, const std::vector<LoadedSample>& samples,
                         std::size_t steps, std::uint64_t seed) {
  if (model.backbone_frozen()) throw VerifyError("toy_pretrain: backbone already frozen");
  const auto& cfg = model.config();
  model.set_prompts_enabled(false);
  Rng rng = Rng(seed).fork(0x9127);
  const std::size_t top = ModelConfig::kLevels - 1;
  const std::size_t C4 = cfg.level_channels(top);
  const std::size_t g4 = cfg.level_grid(top);
  Linear<T> head(C4, 3, rng);

  ParamList<T> plist;
  model.embed().collect(plist, "sem.embed", false);
  model.backbone().collect(plist, "sem.backbone", false);
  head.collect(plist, "head");
  TrainConfig pre_cfg;
  pre_cfg.weight_decay = 0.0;
  AdamW<T> opt(plist, pre_cfg);

  const std::size_t batch = std::min<std::size_t>(4, samples.size());
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<const ImageU8*> images;
    for (std::size_t b = 0; b < batch; ++b) {
      images.push_back(&samples[(step * batch + b) % samples.size()].image);
    }
    auto input = batch_to_tensor<T>(images);

    // target: per-token mean color over the receptive field
    const std::size_t cell = cfg.image_size / g4;
    Tensor<T> target = Tensor<T>::zeros({batch, g4 * g4, 3});
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t ty = 0; ty < g4; ++ty) {
        for (std::size_t tx = 0; tx < g4; ++tx) {
          for (std::size_t c = 0; c < 3; ++c) {
            double acc = 0.0;
            for (std::size_t y = 0; y < cell; ++y) {
              for (std::size_t x = 0; x < cell; ++x) {
                acc += double(images[b]->at(ty * cell + y, tx * cell + x, c)) / 127.5 - 1.0;
              }
            }
            target.value()[(b * g4 * g4 + ty * g4 + tx) * 3 + c] =
                static_cast<T>(acc / double(cell * cell));
          }
        }
      }
    }

    auto tokens = model.embed().forward(input);
    for (std::size_t lv = 0; lv < ModelConfig::kLevels; ++lv) {
      const std::size_t grid = cfg.level_grid(lv);
      tokens = model.backbone().run_level(lv, tokens, grid, nullptr);
      if (lv + 1 < ModelConfig::kLevels) tokens = model.backbone().merge_level(lv, tokens, grid);
    }
    auto diff = sub(head.forward(tokens), target);
    auto loss = mean_all(mul(diff, diff));
    opt.zero_grad();
    backward(loss);
    opt.step(1e-3);
  }
  model.set_prompts_enabled(true);
}

// Builds a model ready for training: seeded or toy-pretrained backbone,
// frozen afterwards in either case.
template <typename T>
inline Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed,
                            const std::vector<LoadedSample>* pretrain_data = nullptr) {
  Model<T> model(cfg, seed);
  if (cfg.use_sem) {
    if (cfg.backbone_init == BackboneInit::kToyPretrain) {
      if (!pretrain_data || pretrain_data->empty()) {
        throw ConfigError("backbone_init=pretrain requires training data");
      }
      toy_pretrain(model, *pretrain_data, cfg.toy_pretrain_steps, seed);
    }
    model.freeze_backbone();
  }
  return model;
}

// ---------------------------------------------------------------------------
// ablation harness
// ---------------------------------------------------------------------------

struct AblationRow {
  int id = 0;
  bool sem = false, hp = false, align = false, fuse = false;
  double f1 = 0.0;
  double auc = 0.0;
};

inline std::string ablation_table_csv(const std::vector<AblationRow>& rows) {
  std::string out = "setting,Sem,HP,F.Align,F.Fuse,F1,AUC\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%d,%d,%d,%.12f,%.12f\n", r.id, int(r.sem), int(r.hp),
                  int(r.align), int(r.fuse), r.f1, r.auc);
    out += buf;
  }
  return out;
}

// Trains and evaluates every setting with identical seeds and budgets.
template <typename T>
inline std::vector<AblationRow> run_ablation(const std::vector<AblationSetting>& settings,
                                             const std::vector<LoadedSample>& samples,
                                             const ModelConfig& base_cfg, const TrainConfig& tcfg,
                                             std::size_t steps) {
  std::vector<AblationRow> rows;
  for (const auto& setting : settings) {
    ModelConfig cfg = base_cfg;
    setting.apply(cfg);
    Model<T> model = build_model<T>(cfg, tcfg.seed, &samples);
    train_model(model, samples, tcfg, steps);
    auto eval = evaluate(model, samples, tcfg.batch_size);
    AblationRow row;
    row.id = setting.id;
    row.sem = setting.sem;
    row.hp = setting.hp;
    row.align = setting.align;
    row.fuse = setting.fuse;
    row.f1 = eval.f1;
    row.auc = eval.auc;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace imlkit
