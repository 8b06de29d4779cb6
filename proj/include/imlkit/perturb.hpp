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
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "imlkit/config.hpp"
#include "imlkit/errors.hpp"
#include "imlkit/image.hpp"
#include "imlkit/rng.hpp"

namespace imlkit {

enum class PerturbKind {
  kBrightness,
  kContrast,
  kDarken,
  kDither,
  kPinkNoise,
  kCompression,  // blockwise frequency-truncation surrogate, not a real codec
};

inline const std::array<PerturbKind, 6>& all_perturb_kinds() {
  static const std::array<PerturbKind, 6> kinds = {
      PerturbKind::kBrightness, PerturbKind::kContrast,  PerturbKind::kDarken,
      PerturbKind::kDither,     PerturbKind::kPinkNoise, PerturbKind::kCompression,
  };
  return kinds;
}

inline const char* perturb_kind_name(PerturbKind k) {
  switch (k) {
    case PerturbKind::kBrightness: return "brightness";
    case PerturbKind::kContrast: return "contrast";
    case PerturbKind::kDarken: return "darken";
    case PerturbKind::kDither: return "dither";
    case PerturbKind::kPinkNoise: return "pink-noise";
    case PerturbKind::kCompression: return "compression-surrogate";
  }
  return "unknown";
}

inline PerturbKind perturb_kind_from(const std::string& s) {
  for (auto k : all_perturb_kinds()) {
    if (s == perturb_kind_name(k)) return k;
  }
  throw DataError("unknown perturbation kind: " + s);
}

namespace perturb_detail {

// In-place complex FFT along one dimension; radix-2 when the length is a
// power of two, direct DFT otherwise (desk-scale images are small).
inline void fft_1d(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  const double sign = inverse ? 1.0 : -1.0;
  if ((n & (n - 1)) == 0) {
    // bit-reversal permutation
    for (std::size_t i = 1, j = 0; i < n; ++i) {
      std::size_t bit = n >> 1;
      for (; j & bit; bit >>= 1) j ^= bit;
      j ^= bit;
      if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
      const double ang = sign * 2.0 * 3.141592653589793238462643 / double(len);
      const std::complex<double> wl(std::cos(ang), std::sin(ang));
      for (std::size_t i = 0; i < n; i += len) {
        std::complex<double> w(1.0, 0.0);
        for (std::size_t j = 0; j < len / 2; ++j) {
          const auto u = a[i + j];
          const auto v = a[i + j + len / 2] * w;
          a[i + j] = u + v;
          a[i + j + len / 2] = u - v;
          w *= wl;
        }
      }
    }
  } else {
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::complex<double> acc(0.0, 0.0);
      for (std::size_t t = 0; t < n; ++t) {
        const double ang = sign * 2.0 * 3.141592653589793238462643 * double(k * t) / double(n);
        acc += a[t] * std::complex<double>(std::cos(ang), std::sin(ang));
      }
      out[k] = acc;
    }
    a = std::move(out);
  }
  if (inverse) {
    for (auto& v : a) v /= double(n);
  }
}

inline void fft_2d(std::vector<std::complex<double>>& grid, std::size_t h, std::size_t w,
                   bool inverse) {
  std::vector<std::complex<double>> line;
  for (std::size_t y = 0; y < h; ++y) {
    line.assign(grid.begin() + y * w, grid.begin() + (y + 1) * w);
    fft_1d(line, inverse);
    std::copy(line.begin(), line.end(), grid.begin() + y * w);
  }
  line.resize(h);
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) line[y] = grid[y * w + x];
    fft_1d(line, inverse);
    for (std::size_t y = 0; y < h; ++y) grid[y * w + x] = line[y];
  }
}

// Noise field whose power spectrum falls off as 1/f, normalized to unit
// standard deviation.
inline std::vector<double> pink_field(std::size_t h, std::size_t w, Rng& rng) {
  std::vector<std::complex<double>> spec(h * w, {0.0, 0.0});
  for (std::size_t v = 0; v < h; ++v) {
    for (std::size_t u = 0; u < w; ++u) {
      if (u == 0 && v == 0) continue;  // no DC
      const double fy = double(std::min(v, h - v));
      const double fx = double(std::min(u, w - u));
      const double f = std::sqrt(fx * fx + fy * fy);
      const double amp = 1.0 / std::sqrt(f);  // power ~ 1/f
      spec[v * w + u] = std::complex<double>(rng.normal() * amp, rng.normal() * amp);
    }
  }
  fft_2d(spec, h, w, true);
  std::vector<double> field(h * w);
  double mean = 0.0;
  for (std::size_t i = 0; i < field.size(); ++i) {
    field[i] = spec[i].real();
    mean += field[i];
  }
  mean /= double(field.size());
  double var = 0.0;
  for (auto& v : field) {
    v -= mean;
    var += v * v;
  }
  var /= double(field.size());
  const double inv_std = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
  for (auto& v : field) v *= inv_std;
  return field;
}

// 8x8 DCT-II basis, orthonormal.
struct Dct8 {
  double basis[8][8];
  Dct8() {
    for (int k = 0; k < 8; ++k) {
      const double scale = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int n = 0; n < 8; ++n) {
        basis[k][n] = scale * std::cos((2.0 * n + 1.0) * k * 3.141592653589793238462643 / 16.0);
      }
    }
  }
};

inline const Dct8& dct8() {
  static const Dct8 d;
  return d;
}

// Zig-zag scan order of an 8x8 block.
inline const std::array<std::pair<int, int>, 64>& zigzag() {
  static const auto order = [] {
    std::array<std::pair<int, int>, 64> o{};
    int idx = 0;
    for (int s = 0; s < 15; ++s) {
      if (s % 2 == 0) {
        for (int y = std::min(s, 7); y >= 0 && s - y <= 7; --y) o[idx++] = {y, s - y};
      } else {
        for (int x = std::min(s, 7); x >= 0 && s - x <= 7; --x) o[idx++] = {s - x, x};
      }
    }
    return o;
  }();
  return order;
}

}  // namespace perturb_detail

// Applies one perturbation at the given severity. Severity 0 is a bit-exact
// copy for every kind. All randomness is drawn from (seed, kind, severity).
inline ImageU8 perturb(const ImageU8& image, PerturbKind kind, int severity, std::uint64_t seed,
                       const PerturbLadders& ladders = PerturbLadders()) {
  if (severity < 0 || severity > 9) {
    throw DataError("perturb: severity must be in 0..9, got " + std::to_string(severity));
  }
  if (severity == 0) return image;
  using namespace perturb_detail;
  const std::size_t H = image.height, W = image.width, C = image.channels;
  Rng rng = Rng(seed).fork(0x9E12u + static_cast<std::uint64_t>(kind) * 131u +
                           static_cast<std::uint64_t>(severity));
  ImageU8 out = image;

  switch (kind) {
    case PerturbKind::kBrightness: {
      const double delta = ladders.brightness_delta[severity];
      for (auto& v : out.data) v = quantize_u8(double(v) + delta);
      break;
    }
    case PerturbKind::kContrast: {
      const double c = ladders.contrast_factor[severity];
      for (auto& v : out.data) v = quantize_u8(128.0 + (double(v) - 128.0) * c);
      break;
    }
    case PerturbKind::kDarken: {
      const double d = ladders.darken_factor[severity];
      for (auto& v : out.data) v = quantize_u8(double(v) * d);
      break;
    }
    case PerturbKind::kDither: {
      const double levels = ladders.dither_levels[severity];
      const double step = 255.0 / (levels - 1.0);
      for (auto& v : out.data) {
        const double noise = rng.uniform(-0.5, 0.5) * step;
        const double q = std::round((double(v) + noise) / step) * step;
        v = quantize_u8(q);
      }
      break;
    }
    case PerturbKind::kPinkNoise: {
      const double sigma = ladders.pink_sigma[severity];
      for (std::size_t c = 0; c < C; ++c) {
        auto field = pink_field(H, W, rng);
        for (std::size_t i = 0; i < H * W; ++i) {
          auto& v = out.data[i * C + c];
          v = quantize_u8(double(v) + sigma * field[i]);
        }
      }
      break;
    }
    case PerturbKind::kCompression: {
      const int keep = static_cast<int>(ladders.compress_keep[severity]);
      const auto& d = dct8();
      const auto& order = zigzag();
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t by = 0; by < H; by += 8) {
          for (std::size_t bx = 0; bx < W; bx += 8) {
            double block[8][8];
            for (int y = 0; y < 8; ++y) {
              for (int x = 0; x < 8; ++x) {
                const std::size_t sy = std::min(by + y, H - 1);
                const std::size_t sx = std::min(bx + x, W - 1);
                block[y][x] = double(image.at(sy, sx, c)) - 128.0;
              }
            }
            double coef[8][8] = {};
            for (int u = 0; u < 8; ++u) {
              for (int v = 0; v < 8; ++v) {
                double acc = 0.0;
                for (int y = 0; y < 8; ++y) {
                  for (int x = 0; x < 8; ++x) acc += block[y][x] * d.basis[u][y] * d.basis[v][x];
                }
                coef[u][v] = acc;
              }
            }
            for (int i = keep; i < 64; ++i) coef[order[i].first][order[i].second] = 0.0;
            for (int y = 0; y < 8; ++y) {
              for (int x = 0; x < 8; ++x) {
                if (by + y >= H || bx + x >= W) continue;
                double acc = 0.0;
                for (int u = 0; u < 8; ++u) {
                  for (int v = 0; v < 8; ++v) acc += coef[u][v] * d.basis[u][y] * d.basis[v][x];
                }
                out.at(by + y, bx + x, c) = quantize_u8(acc + 128.0);
              }
            }
          }
        }
      }
      break;
    }
  }
  return out;
}

}  // namespace imlkit
