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
#include <cstdint>
#include <string>
#include <vector>

#include "imlkit/errors.hpp"
#include "imlkit/image.hpp"
#include "imlkit/rng.hpp"

namespace imlkit {

enum class TamperKind { kCopyMove, kSplice, kInpaint };

inline const char* tamper_kind_name(TamperKind k) {
  switch (k) {
    case TamperKind::kCopyMove: return "copy-move";
    case TamperKind::kSplice: return "splice";
    case TamperKind::kInpaint: return "inpaint";
  }
  return "unknown";
}

inline TamperKind tamper_kind_from(const std::string& s) {
  if (s == "copy-move") return TamperKind::kCopyMove;
  if (s == "splice") return TamperKind::kSplice;
  if (s == "inpaint") return TamperKind::kInpaint;
  throw DataError("unknown tamper kind: " + s);
}

struct TamperProvenance {
  TamperKind kind = TamperKind::kCopyMove;
  std::uint64_t seed = 0;
  std::uint64_t donor_seed = 0;  // splice only
  // region geometry: bounding box of the tampered region and, for copy-move,
  // the source offset (dest = source + offset)
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::ptrdiff_t offset_x = 0, offset_y = 0;
};

struct Sample {
  ImageU8 image;  // RGB
  ImageU8 mask;   // single channel, values {0,1}
  TamperProvenance provenance;
};

namespace datagen_detail {

// Float working canvas, one buffer per channel.
struct Canvas {
  std::size_t w = 0, h = 0;
  std::vector<double> ch[3];
  Canvas(std::size_t width, std::size_t height) : w(width), h(height) {
    for (auto& c : ch) c.assign(w * h, 0.0);
  }
};

// Coarse value-noise grid stretched over the canvas with bilinear weights.
inline void add_value_noise(Canvas& canvas, Rng& rng, std::size_t cells, double amplitude) {
  const std::size_t gw = cells + 1, gh = cells + 1;
  std::vector<double> grid[3];
  for (auto& g : grid) g.resize(gw * gh);
  for (std::size_t c = 0; c < 3; ++c) {
    for (auto& v : grid[c]) v = rng.uniform(-amplitude, amplitude);
  }
  for (std::size_t y = 0; y < canvas.h; ++y) {
    const double gy = double(y) / double(canvas.h - 1) * cells;
    const std::size_t y0 = std::min<std::size_t>(std::size_t(gy), cells - 1);
    const double fy = gy - double(y0);
    for (std::size_t x = 0; x < canvas.w; ++x) {
      const double gx = double(x) / double(canvas.w - 1) * cells;
      const std::size_t x0 = std::min<std::size_t>(std::size_t(gx), cells - 1);
      const double fx = gx - double(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v00 = grid[c][y0 * gw + x0];
        const double v01 = grid[c][y0 * gw + x0 + 1];
        const double v10 = grid[c][(y0 + 1) * gw + x0];
        const double v11 = grid[c][(y0 + 1) * gw + x0 + 1];
        canvas.ch[c][y * canvas.w + x] += (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                          fy * ((1 - fx) * v10 + fx * v11);
      }
    }
  }
}

struct Ellipse {
  double cx, cy, ax, ay, rot;
  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(rot), s = std::sin(rot);
    const double u = (dx * c + dy * s) / ax;
    const double v = (-dx * s + dy * c) / ay;
    return u * u + v * v <= 1.0;
  }
};

struct ConvexPolygon {
  std::vector<double> xs, ys;
  bool contains(double x, double y) const {
    const std::size_t n = xs.size();
    double sign = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = (i + 1) % n;
      const double cross = (xs[j] - xs[i]) * (y - ys[i]) - (ys[j] - ys[i]) * (x - xs[i]);
      if (cross != 0.0) {
        if (sign == 0.0) {
          sign = cross;
        } else if ((cross > 0) != (sign > 0)) {
          return false;
        }
      }
    }
    return true;
  }
};

inline void draw_shapes(Canvas& canvas, Rng& rng) {
  const int count = rng.uniform_int(2, 5);
  for (int i = 0; i < count; ++i) {
    double color[3];
    for (auto& c : color) c = rng.uniform(30.0, 225.0);
    const double blend = rng.uniform(0.65, 1.0);
    if (rng.uniform() < 0.5) {
      Ellipse e{rng.uniform(0.15, 0.85) * canvas.w, rng.uniform(0.15, 0.85) * canvas.h,
                rng.uniform(0.06, 0.28) * canvas.w, rng.uniform(0.06, 0.28) * canvas.h,
                rng.uniform(0.0, 3.141592653589793)};
      for (std::size_t y = 0; y < canvas.h; ++y) {
        for (std::size_t x = 0; x < canvas.w; ++x) {
          if (!e.contains(double(x), double(y))) continue;
          for (std::size_t c = 0; c < 3; ++c) {
            double& px = canvas.ch[c][y * canvas.w + x];
            px = (1.0 - blend) * px + blend * color[c];
          }
        }
      }
    } else {
      const int verts = rng.uniform_int(3, 6);
      const double cx = rng.uniform(0.15, 0.85) * canvas.w;
      const double cy = rng.uniform(0.15, 0.85) * canvas.h;
      const double radius = rng.uniform(0.08, 0.26) * canvas.w;
      ConvexPolygon poly;
      std::vector<double> angles(verts);
      for (auto& a : angles) a = rng.uniform(0.0, 2.0 * 3.141592653589793);
      std::sort(angles.begin(), angles.end());
      for (double a : angles) {
        const double r = radius * rng.uniform(0.6, 1.0);
        poly.xs.push_back(cx + r * std::cos(a));
        poly.ys.push_back(cy + r * std::sin(a));
      }
      for (std::size_t y = 0; y < canvas.h; ++y) {
        for (std::size_t x = 0; x < canvas.w; ++x) {
          if (!poly.contains(double(x), double(y))) continue;
          for (std::size_t c = 0; c < 3; ++c) {
            double& px = canvas.ch[c][y * canvas.w + x];
            px = (1.0 - blend) * px + blend * color[c];
          }
        }
      }
    }
  }
}

inline ImageU8 quantize(const Canvas& canvas) {
  ImageU8 img(canvas.w, canvas.h, 3);
  for (std::size_t y = 0; y < canvas.h; ++y) {
    for (std::size_t x = 0; x < canvas.w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(y, x, c) = quantize_u8(canvas.ch[c][y * canvas.w + x]);
      }
    }
  }
  return img;
}

// Elliptical tamper region with area inside the documented bounds.
struct Region {
  Ellipse shape;
  std::size_t x0, y0, x1, y1;  // tight pixel bounding box (x1/y1 exclusive)
  std::vector<std::size_t> pixels;
};

inline bool make_region(Rng& rng, std::size_t w, std::size_t h, Region& out) {
  const double frac = rng.uniform(0.02, 0.22);
  const double area = frac * double(w) * double(h);
  const double aspect = rng.uniform(0.5, 2.0);
  double ax = std::sqrt(area / 3.141592653589793 * aspect);
  double ay = ax / aspect;
  ax = std::min(ax, 0.45 * w);
  ay = std::min(ay, 0.45 * h);
  const double cx = rng.uniform(ax + 1.0, double(w) - ax - 1.0);
  const double cy = rng.uniform(ay + 1.0, double(h) - ay - 1.0);
  out.shape = Ellipse{cx, cy, ax, ay, rng.uniform(0.0, 3.141592653589793)};
  out.pixels.clear();
  out.x0 = w;
  out.y0 = h;
  out.x1 = 0;
  out.y1 = 0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!out.shape.contains(double(x), double(y))) continue;
      out.pixels.push_back(y * w + x);
      out.x0 = std::min(out.x0, x);
      out.y0 = std::min(out.y0, y);
      out.x1 = std::max(out.x1, x + 1);
      out.y1 = std::max(out.y1, y + 1);
    }
  }
  const double got = double(out.pixels.size()) / double(w * h);
  return got >= 0.01 && got <= 0.50;
}

}  // namespace datagen_detail

// Procedural RGB background: smooth gradients, band-limited value noise at
// three scales, and 2-5 random solid shapes. Deterministic in the seed.
inline ImageU8 gen_base(std::uint64_t seed, std::size_t size = 64) {
  using namespace datagen_detail;
  Rng rng = Rng(seed).fork(0xBA5E);
  Canvas canvas(size, size);

  // linear gradient
  double base[3], gx[3], gy[3];
  for (std::size_t c = 0; c < 3; ++c) {
    base[c] = rng.uniform(60.0, 200.0);
    gx[c] = rng.uniform(-60.0, 60.0) / double(size);
    gy[c] = rng.uniform(-60.0, 60.0) / double(size);
  }
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        canvas.ch[c][y * size + x] = base[c] + gx[c] * double(x) + gy[c] * double(y);
      }
    }
  }
  add_value_noise(canvas, rng, 4, 40.0);
  add_value_noise(canvas, rng, 12, 14.0);
  draw_shapes(canvas, rng);
  // fine texture keeps distinct locations distinguishable at the 8-bit level
  for (std::size_t i = 0; i < size * size; ++i) {
    for (std::size_t c = 0; c < 3; ++c) canvas.ch[c][i] += rng.uniform(-6.0, 6.0);
  }
  return quantize(canvas);
}

// Tampered sample with an exact pixel mask. Copy-move pastes a region of the
// same image at a disjoint offset, splice pastes from a donor seed, inpaint
// fills the region by diffusion from its boundary. For copy-move and splice
// the candidate geometry is retried until every pasted pixel differs from the
// pixel it replaces, so the mask is exactly the changed-pixel set.
inline Sample gen_tampered(std::uint64_t seed, TamperKind kind, std::size_t size = 64) {
  using namespace datagen_detail;
  Sample sample;
  sample.provenance.kind = kind;
  sample.provenance.seed = seed;
  ImageU8 base = gen_base(seed, size);
  Rng rng = Rng(seed).fork(0x7A3Bu + static_cast<std::uint64_t>(kind));

  const int max_tries = 64;
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    Region region;
    if (!make_region(rng, size, size, region)) continue;

    if (kind == TamperKind::kInpaint) {
      ImageU8 img = base;
      // Dirichlet diffusion fill: region pixels relax toward the average of
      // their neighbors, with out-of-region pixels fixed.
      std::vector<double> fill[3];
      std::vector<bool> inside(size * size, false);
      for (auto p : region.pixels) inside[p] = true;
      for (std::size_t c = 0; c < 3; ++c) {
        fill[c].resize(size * size);
        for (std::size_t i = 0; i < size * size; ++i) fill[c][i] = double(base.data[i * 3 + c]);
        double mean = 0.0;
        std::size_t cnt = 0;
        for (std::size_t i = 0; i < size * size; ++i) {
          if (!inside[i]) {
            mean += fill[c][i];
            ++cnt;
          }
        }
        mean /= double(cnt);
        for (auto p : region.pixels) fill[c][p] = mean;
        for (int it = 0; it < 60; ++it) {
          for (auto p : region.pixels) {
            const std::size_t y = p / size, x = p % size;
            double acc = 0.0;
            int n = 0;
            if (y > 0) { acc += fill[c][p - size]; ++n; }
            if (y + 1 < size) { acc += fill[c][p + size]; ++n; }
            if (x > 0) { acc += fill[c][p - 1]; ++n; }
            if (x + 1 < size) { acc += fill[c][p + 1]; ++n; }
            fill[c][p] = acc / double(n);
          }
        }
        for (auto p : region.pixels) img.data[p * 3 + c] = quantize_u8(fill[c][p]);
      }
      sample.image = img;
      sample.mask = ImageU8(size, size, 1, 0);
      for (auto p : region.pixels) sample.mask.data[p] = 1;
      sample.provenance.x0 = region.x0;
      sample.provenance.y0 = region.y0;
      sample.provenance.x1 = region.x1;
      sample.provenance.y1 = region.y1;
      return sample;
    }

    // source of pasted content; the region is the destination (= mask), with
    // dest = source + offset, i.e. source pixel (y,x) - offset.
    ImageU8 donor;
    std::ptrdiff_t off_x = 0, off_y = 0;
    if (kind == TamperKind::kCopyMove) {
      donor = base;
      const std::size_t rw = region.x1 - region.x0, rh = region.y1 - region.y0;
      // keep the source window inside the image
      off_x = rng.uniform_int(int(region.x1) - int(size), int(region.x0));
      off_y = rng.uniform_int(int(region.y1) - int(size), int(region.y0));
      // bounding boxes must be disjoint
      if (std::abs(off_x) < std::ptrdiff_t(rw) && std::abs(off_y) < std::ptrdiff_t(rh)) continue;
    } else {  // splice
      sample.provenance.donor_seed = Rng(seed).fork(0xD0).next_u64();
      donor = gen_base(sample.provenance.donor_seed, size);
    }

    // Reject candidates where any pasted pixel equals the original.
    bool collision = false;
    for (auto p : region.pixels) {
      const std::size_t y = p / size, x = p % size;
      const std::size_t sy = kind == TamperKind::kCopyMove ? std::size_t(std::ptrdiff_t(y) - off_y)
                                                           : y;
      const std::size_t sx = kind == TamperKind::kCopyMove ? std::size_t(std::ptrdiff_t(x) - off_x)
                                                           : x;
      bool same = true;
      for (std::size_t c = 0; c < 3; ++c) {
        if (donor.at(sy, sx, c) != base.at(y, x, c)) {
          same = false;
          break;
        }
      }
      if (same) {
        collision = true;
        break;
      }
    }
    if (collision) continue;

    ImageU8 img = base;
    sample.mask = ImageU8(size, size, 1, 0);
    for (auto p : region.pixels) {
      const std::size_t y = p / size, x = p % size;
      const std::size_t sy = kind == TamperKind::kCopyMove ? std::size_t(std::ptrdiff_t(y) - off_y)
                                                           : y;
      const std::size_t sx = kind == TamperKind::kCopyMove ? std::size_t(std::ptrdiff_t(x) - off_x)
                                                           : x;
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = donor.at(sy, sx, c);
      sample.mask.data[p] = 1;
    }
    sample.image = img;
    sample.provenance.x0 = region.x0;
    sample.provenance.y0 = region.y0;
    sample.provenance.x1 = region.x1;
    sample.provenance.y1 = region.y1;
    sample.provenance.offset_x = off_x;
    sample.provenance.offset_y = off_y;
    return sample;
  }
  throw DataError("gen_tampered: no collision-free geometry found for seed " +
                  std::to_string(seed));
}

}  // namespace imlkit
