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
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "imlkit/errors.hpp"

namespace imlkit {

// Flat `key = value` configuration with `#` comments. Keys are dotted paths;
// values stay strings until a typed getter pulls them out. Runs snapshot the
// resolved map next to their outputs so they can be diffed and replayed.
class KVConfig {
 public:
  KVConfig() = default;

  static KVConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str());
  }

  static KVConfig from_string(const std::string& text) {
    KVConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(lineno) + " is not key = value: '" +
                          trimmed + "'");
      }
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string val = trim(trimmed.substr(eq + 1));
      if (key.empty()) throw ConfigError("empty key on config line " + std::to_string(lineno));
      cfg.values_[key] = val;
    }
    return cfg;
  }

  // "key=value" as passed on the command line.
  void apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override must be key=value, got '" + kv + "'");
    }
    values_[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return std::stod(it->second);
    } catch (...) {
      throw ConfigError("config key '" + key + "' is not a number: '" + it->second + "'");
    }
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return std::stoll(it->second);
    } catch (...) {
      throw ConfigError("config key '" + key + "' is not an integer: '" + it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "' is not a boolean: '" + v + "'");
  }

  std::vector<double> get_list(const std::string& key, std::vector<double> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        out.push_back(std::stod(trim(item)));
      } catch (...) {
        throw ConfigError("config key '" + key + "' has a non-numeric list item: '" + item + "'");
      }
    }
    return out;
  }

  void set(const std::string& key, const std::string& val) { values_[key] = val; }

  std::string serialize() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
    return os.str();
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

enum class BackboneInit { kSeeded, kToyPretrain };

// Architectural hyperparameters. Defaults are the desk-scale setup: 64x64
// inputs, patch 4, four levels with channel doubling.
struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 48;  // C' at level 1; doubles per level
  std::vector<std::size_t> depths = {1, 1, 2, 1};
  std::size_t window = 4;
  std::size_t head_dim = 16;
  double mlp_ratio = 4.0;
  std::size_t prompts_per_window = 4;
  double prompt_init_range = 0.02;
  double ln_eps = 1e-5;

  // Branch / module toggles (ablation flags Sem, HP, F.Align, F.Fuse).
  bool use_sem = true;
  bool use_hp = true;
  bool use_align = true;
  bool use_fuse = true;

  std::size_t faf_heads = 2;
  std::size_t faf_points = 4;
  double faf_offset_scale_init = 0.5;  // per-head offset scale, in pixels

  std::size_t decoder_dim = 64;
  std::size_t decoder_heads = 4;
  std::size_t decoder_rounds = 3;
  double decoder_mask_threshold = 0.5;

  BackboneInit backbone_init = BackboneInit::kSeeded;
  std::size_t toy_pretrain_steps = 30;

  static constexpr std::size_t kLevels = 4;

  std::size_t level_channels(std::size_t level) const {  // level in 0..3
    return embed_dim << level;
  }
  std::size_t level_grid(std::size_t level) const {
    return image_size / patch_size >> level;
  }
  std::size_t patch_grid() const { return image_size / patch_size; }

  static ModelConfig from(const KVConfig& kv) {
    ModelConfig m;
    m.image_size = static_cast<std::size_t>(kv.get_int("model.image_size", 64));
    m.patch_size = static_cast<std::size_t>(kv.get_int("model.patch_size", 4));
    m.embed_dim = static_cast<std::size_t>(kv.get_int("model.embed_dim", 48));
    auto depths = kv.get_list("model.depths", {1, 1, 2, 1});
    m.depths.assign(depths.begin(), depths.end());
    m.window = static_cast<std::size_t>(kv.get_int("model.window", 4));
    m.head_dim = static_cast<std::size_t>(kv.get_int("model.head_dim", 16));
    m.mlp_ratio = kv.get_double("model.mlp_ratio", 4.0);
    m.prompts_per_window = static_cast<std::size_t>(kv.get_int("model.prompts_per_window", 4));
    m.prompt_init_range = kv.get_double("model.prompt_init_range", 0.02);
    m.ln_eps = kv.get_double("model.ln_eps", 1e-5);
    m.use_sem = kv.get_bool("model.use_sem", true);
    m.use_hp = kv.get_bool("model.use_hp", true);
    m.use_align = kv.get_bool("model.use_align", true);
    m.use_fuse = kv.get_bool("model.use_fuse", true);
    m.faf_heads = static_cast<std::size_t>(kv.get_int("model.faf.heads", 2));
    m.faf_points = static_cast<std::size_t>(kv.get_int("model.faf.points", 4));
    m.faf_offset_scale_init = kv.get_double("model.faf.offset_scale_init", 0.5);
    m.decoder_dim = static_cast<std::size_t>(kv.get_int("model.decoder.dim", 64));
    m.decoder_heads = static_cast<std::size_t>(kv.get_int("model.decoder.heads", 4));
    m.decoder_rounds = static_cast<std::size_t>(kv.get_int("model.decoder.rounds", 3));
    m.decoder_mask_threshold = kv.get_double("model.decoder.mask_threshold", 0.5);
    const std::string init = kv.get_str("model.backbone_init", "seeded");
    if (init == "seeded") {
      m.backbone_init = BackboneInit::kSeeded;
    } else if (init == "pretrain") {
      m.backbone_init = BackboneInit::kToyPretrain;
    } else {
      throw ConfigError("model.backbone_init must be 'seeded' or 'pretrain', got '" + init + "'");
    }
    m.toy_pretrain_steps = static_cast<std::size_t>(kv.get_int("model.toy_pretrain_steps", 30));
    m.validate();
    return m;
  }

  void validate() const {
    if (depths.size() != kLevels) {
      throw ConfigError("model.depths must list " + std::to_string(kLevels) + " entries");
    }
    if (image_size == 0 || patch_size == 0 || image_size % patch_size != 0) {
      throw ConfigError("model.image_size must be a positive multiple of model.patch_size");
    }
    if (embed_dim % 3 != 0) {
      throw ConfigError("model.embed_dim must be divisible by 3 (one high-pass kernel bank per "
                        "size)");
    }
    for (std::size_t lv = 0; lv < kLevels; ++lv) {
      if (level_channels(lv) % head_dim != 0) {
        throw ConfigError("channel count at level " + std::to_string(lv + 1) +
                          " is not divisible by model.head_dim");
      }
      const std::size_t grid = level_grid(lv);
      if (grid == 0) throw ConfigError("token grid vanishes before level 4; enlarge the input");
      const std::size_t ws = std::min(window, grid);
      if (grid % ws != 0) {
        throw ConfigError("grid " + std::to_string(grid) + " at level " + std::to_string(lv + 1) +
                          " is not divisible by window " + std::to_string(ws));
      }
    }
    if (!use_sem && !use_hp) {
      throw ConfigError("at least one of model.use_sem / model.use_hp must be enabled");
    }
    if ((use_align || use_fuse) && !(use_sem && use_hp)) {
      throw ConfigError("model.use_align / model.use_fuse require both branches");
    }
    if (decoder_rounds < 1 || decoder_rounds > kLevels - 1) {
      throw ConfigError("model.decoder.rounds must be in 1.." + std::to_string(kLevels - 1));
    }
  }
};

enum class PosWeightMode { kAuto, kFixed };

// Optimization hyperparameters. Learning-rate defaults follow the reference
// recipe (peak 1e-4, floor 1e-6, AdamW 0.9/0.999, weight decay 0.05, 5
// warm-up epochs); scale knobs (epochs, batch) are desk-sized.
struct TrainConfig {
  double max_lr = 1e-4;
  double min_lr = 1e-6;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 80;
  std::size_t warmup_epochs = 5;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;
  PosWeightMode pos_weight_mode = PosWeightMode::kAuto;
  double pos_weight_fixed = 1.0;
  double pos_weight_max = 20.0;
  std::size_t restart_period = 0;  // 0 = single cosine cycle
  std::size_t max_steps = 0;       // 0 = derive from epochs

  static TrainConfig from(const KVConfig& kv) {
    TrainConfig t;
    t.max_lr = kv.get_double("train.max_lr", 1e-4);
    t.min_lr = kv.get_double("train.min_lr", 1e-6);
    t.weight_decay = kv.get_double("train.weight_decay", 0.05);
    t.beta1 = kv.get_double("train.beta1", 0.9);
    t.beta2 = kv.get_double("train.beta2", 0.999);
    t.adam_eps = kv.get_double("train.adam_eps", 1e-8);
    t.epochs = static_cast<std::size_t>(kv.get_int("train.epochs", 80));
    t.warmup_epochs = static_cast<std::size_t>(kv.get_int("train.warmup_epochs", 5));
    t.batch_size = static_cast<std::size_t>(kv.get_int("train.batch_size", 4));
    t.seed = static_cast<std::uint64_t>(kv.get_int("train.seed", 1));
    const std::string mode = kv.get_str("train.pos_weight_mode", "auto");
    if (mode == "auto") {
      t.pos_weight_mode = PosWeightMode::kAuto;
    } else if (mode == "fixed") {
      t.pos_weight_mode = PosWeightMode::kFixed;
    } else {
      throw ConfigError("train.pos_weight_mode must be 'auto' or 'fixed'");
    }
    t.pos_weight_fixed = kv.get_double("train.pos_weight_fixed", 1.0);
    t.pos_weight_max = kv.get_double("train.pos_weight_max", 20.0);
    t.restart_period = static_cast<std::size_t>(kv.get_int("train.restart_period", 0));
    t.max_steps = static_cast<std::size_t>(kv.get_int("train.max_steps", 0));
    t.validate();
    return t;
  }

  void validate() const {
    if (min_lr > max_lr) throw ConfigError("train.min_lr must not exceed train.max_lr");
    if (warmup_epochs >= epochs) throw ConfigError("train.warmup_epochs must be below train.epochs");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (!(pos_weight_fixed > 0)) throw ConfigError("train.pos_weight_fixed must be positive");
  }
};

// Per-kind severity tables, index 0..9. Entry 0 is always the identity; every
// table is strictly monotone so the degradation ordering is auditable.
struct PerturbLadders {
  std::array<double, 10> brightness_delta = {0, 8, 16, 24, 32, 40, 48, 56, 64, 72};
  std::array<double, 10> contrast_factor = {1.00, 0.92, 0.84, 0.76, 0.68,
                                            0.60, 0.52, 0.44, 0.36, 0.28};
  std::array<double, 10> darken_factor = {1.00, 0.93, 0.86, 0.79, 0.72,
                                          0.65, 0.58, 0.51, 0.44, 0.37};
  std::array<double, 10> dither_levels = {256, 128, 88, 64, 44, 32, 22, 16, 11, 8};
  std::array<double, 10> pink_sigma = {0, 4, 8, 12, 16, 20, 24, 28, 32, 36};
  std::array<double, 10> compress_keep = {64, 38, 28, 20, 14, 10, 7, 5, 3, 1};

  static PerturbLadders from(const KVConfig& kv) {
    PerturbLadders p;
    auto load = [&](const char* key, std::array<double, 10>& dst) {
      std::vector<double> fallback(dst.begin(), dst.end());
      auto v = kv.get_list(key, fallback);
      if (v.size() != 10) {
        throw ConfigError(std::string("perturb ladder '") + key + "' must have 10 entries");
      }
      std::copy(v.begin(), v.end(), dst.begin());
    };
    load("perturb.brightness_delta", p.brightness_delta);
    load("perturb.contrast_factor", p.contrast_factor);
    load("perturb.darken_factor", p.darken_factor);
    load("perturb.dither_levels", p.dither_levels);
    load("perturb.pink_sigma", p.pink_sigma);
    load("perturb.compress_keep", p.compress_keep);
    p.validate();
    return p;
  }

  void validate() const {
    auto strictly_monotone = [](const std::array<double, 10>& a) {
      bool inc = true, dec = true;
      for (std::size_t i = 1; i < a.size(); ++i) {
        inc = inc && a[i] > a[i - 1];
        dec = dec && a[i] < a[i - 1];
      }
      return inc || dec;
    };
    if (!strictly_monotone(brightness_delta) || !strictly_monotone(contrast_factor) ||
        !strictly_monotone(darken_factor) || !strictly_monotone(dither_levels) ||
        !strictly_monotone(pink_sigma) || !strictly_monotone(compress_keep)) {
      throw ConfigError("perturbation ladders must be strictly monotone in severity");
    }
  }
};

// Ablation grid rows: flags {Sem, HP, F.Align, F.Fuse} per setting id 1..6.
struct AblationSetting {
  int id = 6;
  bool sem = true, hp = true, align = true, fuse = true;

  void apply(ModelConfig& m) const {
    m.use_sem = sem;
    m.use_hp = hp;
    m.use_align = align;
    m.use_fuse = fuse;
    m.validate();
  }

  static std::vector<AblationSetting> standard_grid() {
    return {
        {1, true, false, false, false}, {2, false, true, false, false},
        {3, true, true, false, false},  {4, true, true, true, false},
        {5, true, true, false, true},   {6, true, true, true, true},
    };
  }
};

}  // namespace imlkit
