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

// Brute-force reference implementations used as test oracles. These are kept
// deliberately naive and independent of the library's execution paths: plain
// nested loops over plain buffers.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

// Direct cross-correlation, zero padding.
inline std::vector<double> conv2d(const std::vector<double>& x, std::size_t N, std::size_t C,
                                  std::size_t H, std::size_t W, const std::vector<double>& w,
                                  std::size_t K, std::size_t kh, std::size_t kw,
                                  std::size_t stride, std::size_t pad) {
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> out(N * K * Ho * Wo, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          double acc = 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t fy = 0; fy < kh; ++fy)
              for (std::size_t fx = 0; fx < kw; ++fx) {
                const long iy = long(oy * stride + fy) - long(pad);
                const long ix = long(ox * stride + fx) - long(pad);
                if (iy < 0 || iy >= long(H) || ix < 0 || ix >= long(W)) continue;
                acc += x[((n * C + c) * H + iy) * W + ix] *
                       w[((k * C + c) * kh + fy) * kw + fx];
              }
          out[((n * K + k) * Ho + oy) * Wo + ox] = acc;
        }
  return out;
}

// Per-row mean/variance normalization with affine, scalar arithmetic.
inline std::vector<double> layer_norm(const std::vector<double>& x, std::size_t rows,
                                      std::size_t d, const std::vector<double>& gain,
                                      const std::vector<double>& bias, double eps) {
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += x[r * d + i];
    mean /= double(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double c = x[r * d + i] - mean;
      var += c * c;
    }
    var /= double(d);
    for (std::size_t i = 0; i < d; ++i) {
      out[r * d + i] = (x[r * d + i] - mean) / std::sqrt(var + eps) * gain[i] + bias[i];
    }
  }
  return out;
}

// Four-neighbor weighted sum, zero outside the map.
inline double bilinear(const std::vector<double>& map, std::size_t C, std::size_t H,
                       std::size_t W, std::size_t c, double x, double y) {
  auto fetch = [&](long yy, long xx) -> double {
    if (yy < 0 || yy >= long(H) || xx < 0 || xx >= long(W)) return 0.0;
    return map[(c * H + yy) * W + xx];
  };
  const double fx = std::floor(x), fy = std::floor(y);
  const long x0 = long(fx), y0 = long(fy);
  const double wx = x - fx, wy = y - fy;
  return (1.0 - wy) * ((1.0 - wx) * fetch(y0, x0) + wx * fetch(y0, x0 + 1)) +
         wy * ((1.0 - wx) * fetch(y0 + 1, x0) + wx * fetch(y0 + 1, x0 + 1));
}

inline std::vector<double> softmax_row(const std::vector<double>& row) {
  std::vector<double> out(row.size());
  const double mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    out[i] = std::exp(row[i] - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

// F1 from its definition, counting pairs.
inline double f1(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && truth[i]) ++tp;
    if (pred[i] && !truth[i]) ++fp;
    if (!pred[i] && truth[i]) ++fn;
  }
  std::size_t npred = tp + fp, ntruth = tp + fn;
  if (npred == 0 && ntruth == 0) return 1.0;
  if (npred == 0 || ntruth == 0) return 0.0;
  return 2.0 * double(tp) / double(2 * tp + fp + fn);
}

// AUC by all-pairs counting, ties at half credit.
inline double auc(const std::vector<double>& scores, const std::vector<int>& truth) {
  double wins = 0.0;
  std::size_t np = 0, nn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!truth[i]) continue;
    ++np;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (truth[j]) continue;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (!truth[j]) ++nn;
  return wins / (double(np) * double(nn));
}

}  // namespace oracle
