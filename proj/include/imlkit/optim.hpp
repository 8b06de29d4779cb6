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
#include <cstddef>
#include <string>
#include <vector>

#include "imlkit/config.hpp"
#include "imlkit/nn.hpp"
#include "imlkit/tensor.hpp"

namespace imlkit {

struct ScheduleSpec {
  double max_lr = 1e-4;
  double min_lr = 1e-6;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;
  std::size_t restart_period = 0;  // 0 = one cosine cycle over the run

  static ScheduleSpec from(const TrainConfig& cfg, std::size_t total_steps) {
    ScheduleSpec s;
    s.max_lr = cfg.max_lr;
    s.min_lr = cfg.min_lr;
    s.total_steps = total_steps;
    s.warmup_steps = cfg.epochs > 0
                         ? total_steps * cfg.warmup_epochs / cfg.epochs
                         : 0;
    s.restart_period = cfg.restart_period;
    return s;
  }
};

// Linear warm-up from min to max, then cosine annealing back to min. With a
// restart period the cosine phase wraps (jumping back to max); otherwise the
// cycle spans the remaining steps and clamps at the floor.
inline double lr_schedule(std::size_t step, const ScheduleSpec& s) {
  if (s.warmup_steps > 0 && step < s.warmup_steps) {
    return s.min_lr + (s.max_lr - s.min_lr) * double(step) / double(s.warmup_steps);
  }
  const std::size_t t = step - s.warmup_steps;
  std::size_t period = s.restart_period > 0
                           ? s.restart_period
                           : (s.total_steps > s.warmup_steps ? s.total_steps - s.warmup_steps : 1);
  if (period == 0) period = 1;
  const std::size_t tc = s.restart_period > 0 ? t % period : std::min(t, period);
  const double phase = 3.141592653589793238462643 * double(tc) / double(period);
  return s.min_lr + 0.5 * (s.max_lr - s.min_lr) * (1.0 + std::cos(phase));
}

// Decoupled-weight-decay Adam over the trainable parameters. Frozen tensors
// are filtered out at construction, so the state holds no entry for them.
template <typename T>
class AdamW {
 public:
  AdamW(const ParamList<T>& params, const TrainConfig& cfg)
      : beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_eps), weight_decay_(cfg.weight_decay) {
    for (const auto& p : params) {
      if (p.frozen || !p.tensor.requires_grad()) continue;
      Entry e;
      e.name = p.name;
      e.param = p.tensor;
      e.m.assign(p.tensor.size(), T(0));
      e.v.assign(p.tensor.size(), T(0));
      entries_.push_back(std::move(e));
    }
  }

  std::size_t size() const { return entries_.size(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

  void zero_grad() {
    for (auto& e : entries_) e.param.zero_grad();
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (auto& e : entries_) {
      auto& value = e.param.value();
      const auto& grad = e.param.grad();
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = double(grad[i]);
        const double m = double(e.m[i]) * beta1_ + (1.0 - beta1_) * g;
        const double v = double(e.v[i]) * beta2_ + (1.0 - beta2_) * g * g;
        e.m[i] = static_cast<T>(m);
        e.v[i] = static_cast<T>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        value[i] = static_cast<T>(double(value[i]) -
                                  lr * (mhat / (std::sqrt(vhat) + eps_) +
                                        weight_decay_ * double(value[i])));
      }
    }
  }

 private:
  struct Entry {
    std::string name;
    Tensor<T> param;
    std::vector<T> m, v;
  };
  std::vector<Entry> entries_;
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
};

}  // namespace imlkit
