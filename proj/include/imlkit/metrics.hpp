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
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "imlkit/errors.hpp"

namespace imlkit {

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  void add(double prob, bool positive, double threshold = 0.5) {
    const bool pred = prob > threshold;
    if (pred && positive) ++tp;
    else if (pred && !positive) ++fp;
    else if (!pred && positive) ++fn;
    else ++tn;
  }

  double f1() const {
    const std::size_t npred = tp + fp, ntruth = tp + fn;
    if (npred == 0 && ntruth == 0) return 1.0;
    if (npred == 0 || ntruth == 0) return 0.0;
    return 2.0 * double(tp) / double(2 * tp + fp + fn);
  }
};

// F1 at a fixed binarization threshold. Empty-vs-empty scores 1, exactly one
// empty scores 0.
inline double f1_fixed(const std::vector<double>& pred_probs, const std::vector<std::uint8_t>& mask,
                       double threshold = 0.5) {
  if (pred_probs.size() != mask.size()) {
    throw std::invalid_argument("f1_fixed: prediction and mask sizes differ (" +
                                std::to_string(pred_probs.size()) + " vs " +
                                std::to_string(mask.size()) + ")");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < mask.size(); ++i) c.add(pred_probs[i], mask[i] != 0, threshold);
  return c.f1();
}

// Rank-based (Mann-Whitney) AUC with midrank tie handling. Undefined when the
// mask holds a single class.
inline double pixel_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& mask) {
  if (scores.size() != mask.size()) {
    throw std::invalid_argument("pixel_auc: score and mask sizes differ");
  }
  std::size_t n_pos = 0;
  for (auto m : mask) n_pos += (m != 0);
  const std::size_t n_neg = mask.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw DataError("pixel_auc: undefined for a single-class mask");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // midranks over tie groups
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double midrank = 0.5 * double(i + j) + 1.0;  // ranks are 1-based
    for (std::size_t k = i; k <= j; ++k) {
      if (mask[idx[k]] != 0) rank_sum_pos += midrank;
    }
    i = j + 1;
  }
  return (rank_sum_pos - 0.5 * double(n_pos) * double(n_pos + 1)) /
         (double(n_pos) * double(n_neg));
}

}  // namespace imlkit
