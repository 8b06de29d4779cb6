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

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "imlkit/datagen.hpp"
#include "imlkit/dataset.hpp"
#include "imlkit/image.hpp"
#include "imlkit/perturb.hpp"

using imlkit::ImageU8;
using imlkit::PerturbKind;
using imlkit::Sample;
using imlkit::TamperKind;

TEST_CASE("gen_base is byte-deterministic in the seed") {
  auto a = imlkit::gen_base(1234, 64);
  auto b = imlkit::gen_base(1234, 64);
  REQUIRE(a == b);
}

TEST_CASE("distinct seeds differ in at least 1% of pixels") {
  const std::size_t size = 64;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto a = imlkit::gen_base(seed, size);
    auto b = imlkit::gen_base(seed + 1, size);
    std::size_t diff = 0;
    for (std::size_t i = 0; i < size * size; ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        if (a.data[i * 3 + c] != b.data[i * 3 + c]) {
          ++diff;
          break;
        }
      }
    }
    REQUIRE(double(diff) / double(size * size) >= 0.01);
  }
}

TEST_CASE("tampered samples respect the mask area bounds") {
  for (auto kind : {TamperKind::kCopyMove, TamperKind::kSplice, TamperKind::kInpaint}) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      Sample s = imlkit::gen_tampered(seed, kind, 64);
      std::size_t area = 0;
      for (auto v : s.mask.data) {
        REQUIRE((v == 0 || v == 1));
        area += v;
      }
      const double frac = double(area) / double(64 * 64);
      REQUIRE(frac >= 0.01);
      REQUIRE(frac <= 0.50);
    }
  }
}

TEST_CASE("copy-move pastes the source region at the recorded offset") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Sample s = imlkit::gen_tampered(seed, TamperKind::kCopyMove, 64);
    const auto& p = s.provenance;
    auto base = imlkit::gen_base(seed, 64);
    for (std::size_t y = 0; y < 64; ++y) {
      for (std::size_t x = 0; x < 64; ++x) {
        if (!s.mask.at(y, x)) continue;
        const std::size_t sy = std::size_t(std::ptrdiff_t(y) - p.offset_y);
        const std::size_t sx = std::size_t(std::ptrdiff_t(x) - p.offset_x);
        for (std::size_t c = 0; c < 3; ++c) {
          REQUIRE(s.image.at(y, x, c) == base.at(sy, sx, c));
        }
      }
    }
  }
}

TEST_CASE("splice donor pixels match the regenerated donor image") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Sample s = imlkit::gen_tampered(seed, TamperKind::kSplice, 64);
    auto donor = imlkit::gen_base(s.provenance.donor_seed, 64);
    for (std::size_t y = 0; y < 64; ++y) {
      for (std::size_t x = 0; x < 64; ++x) {
        if (!s.mask.at(y, x)) continue;
        for (std::size_t c = 0; c < 3; ++c) {
          REQUIRE(s.image.at(y, x, c) == donor.at(y, x, c));
        }
      }
    }
  }
}

TEST_CASE("the mask is exactly the changed-pixel set for copy-move and splice") {
  for (auto kind : {TamperKind::kCopyMove, TamperKind::kSplice}) {
    for (std::uint64_t seed = 1; seed <= 15; ++seed) {
      Sample s = imlkit::gen_tampered(seed, kind, 64);
      auto base = imlkit::gen_base(seed, 64);
      for (std::size_t i = 0; i < 64 * 64; ++i) {
        bool changed = false;
        for (std::size_t c = 0; c < 3; ++c) {
          if (s.image.data[i * 3 + c] != base.data[i * 3 + c]) changed = true;
        }
        REQUIRE(changed == (s.mask.data[i] == 1));
      }
    }
  }
}

TEST_CASE("tampered generation is deterministic") {
  for (auto kind : {TamperKind::kCopyMove, TamperKind::kSplice, TamperKind::kInpaint}) {
    Sample a = imlkit::gen_tampered(77, kind, 64);
    Sample b = imlkit::gen_tampered(77, kind, 64);
    REQUIRE(a.image == b.image);
    REQUIRE(a.mask == b.mask);
  }
}

TEST_CASE("png round trip preserves bytes for gray and rgb") {
  auto img = imlkit::gen_base(5, 32);
  auto rt = imlkit::decode_png(imlkit::encode_png(img));
  REQUIRE(rt == img);

  ImageU8 gray(17, 9, 1);
  imlkit::Rng rng(3);
  for (auto& v : gray.data) v = std::uint8_t(rng.next_u32() & 0xFF);
  auto rt2 = imlkit::decode_png(imlkit::encode_png(gray));
  REQUIRE(rt2 == gray);
}

TEST_CASE("png decoder handles all five filter types") {
  // hand-built 3x3 RGB PNG exercising filters 1..4 plus none
  ImageU8 img(5, 5, 3);
  imlkit::Rng rng(9);
  for (auto& v : img.data) v = std::uint8_t(rng.next_u32() & 0xFF);
  const std::size_t stride = img.width * img.channels;
  std::vector<std::uint8_t> raw;
  for (std::size_t y = 0; y < img.height; ++y) {
    const std::uint8_t filter = std::uint8_t(y % 5);
    raw.push_back(filter);
    for (std::size_t i = 0; i < stride; ++i) {
      const int cur = img.data[y * stride + i];
      const int a = i >= 3 ? img.data[y * stride + i - 3] : 0;
      const int b = y > 0 ? img.data[(y - 1) * stride + i] : 0;
      const int c = (y > 0 && i >= 3) ? img.data[(y - 1) * stride + i - 3] : 0;
      int v = cur;
      switch (filter) {
        case 0: break;
        case 1: v = cur - a; break;
        case 2: v = cur - b; break;
        case 3: v = cur - (a + b) / 2; break;
        case 4: v = cur - imlkit::pngdetail::paeth(a, b, c); break;
      }
      raw.push_back(std::uint8_t(v & 0xFF));
    }
  }
  uLongf bound = compressBound(uLong(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  REQUIRE(compress2(compressed.data(), &bound, raw.data(), uLong(raw.size()), 6) == Z_OK);
  compressed.resize(bound);

  std::vector<std::uint8_t> png = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<std::uint8_t> ihdr;
  imlkit::pngdetail::put_u32(ihdr, 5);
  imlkit::pngdetail::put_u32(ihdr, 5);
  ihdr.push_back(8);
  ihdr.push_back(2);
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  imlkit::pngdetail::write_chunk(png, "IHDR", ihdr);
  imlkit::pngdetail::write_chunk(png, "IDAT", compressed);
  imlkit::pngdetail::write_chunk(png, "IEND", {});

  auto decoded = imlkit::decode_png(png);
  REQUIRE(decoded == img);
}

TEST_CASE("severity 0 is the identity for every perturbation kind") {
  auto img = imlkit::gen_base(11, 64);
  for (auto kind : imlkit::all_perturb_kinds()) {
    auto out = imlkit::perturb(img, kind, 0, 42);
    REQUIRE(out == img);
  }
}

TEST_CASE("perturb rejects out-of-range severities") {
  auto img = imlkit::gen_base(11, 16);
  REQUIRE_THROWS_AS(imlkit::perturb(img, PerturbKind::kBrightness, 10, 1), imlkit::DataError);
  REQUIRE_THROWS_AS(imlkit::perturb(img, PerturbKind::kBrightness, -1, 1), imlkit::DataError);
}

TEST_CASE("brightness on a pure-white image is a no-op") {
  ImageU8 white(32, 32, 3, 255);
  for (int s = 1; s <= 9; ++s) {
    auto out = imlkit::perturb(white, PerturbKind::kBrightness, s, 7);
    REQUIRE(out == white);
  }
}

TEST_CASE("perturbations are deterministic in (seed, kind, severity)") {
  auto img = imlkit::gen_base(3, 64);
  for (auto kind : imlkit::all_perturb_kinds()) {
    auto a = imlkit::perturb(img, kind, 5, 99);
    auto b = imlkit::perturb(img, kind, 5, 99);
    REQUIRE(a == b);
  }
}

TEST_CASE("mean absolute change is non-decreasing in severity") {
  const int seeds = 50;
  for (auto kind : imlkit::all_perturb_kinds()) {
    std::vector<double> mad(10, 0.0);
    for (int s = 0; s <= 9; ++s) {
      double acc = 0.0;
      for (int seed = 0; seed < seeds; ++seed) {
        auto img = imlkit::gen_base(std::uint64_t(seed), 32);
        auto out = imlkit::perturb(img, kind, s, std::uint64_t(seed) * 31 + 7);
        for (std::size_t i = 0; i < img.data.size(); ++i) {
          acc += std::abs(double(out.data[i]) - double(img.data[i]));
        }
      }
      mad[std::size_t(s)] = acc / double(seeds);
    }
    for (int s = 1; s <= 9; ++s) {
      INFO("kind=" << imlkit::perturb_kind_name(kind) << " severity=" << s);
      REQUIRE(mad[std::size_t(s)] >= mad[std::size_t(s - 1)] - 1e-9);
    }
  }
}

TEST_CASE("pink noise has the documented spectral slope") {
  // Periodogram slope of the added noise, fitted over the radial band; the
  // DFT here is the brute-force definition, independent of the generator.
  const std::size_t N = 64;
  auto img = imlkit::gen_base(21, N);
  auto noisy = imlkit::perturb(img, PerturbKind::kPinkNoise, 5, 4242);

  std::vector<double> diff(N * N);
  for (std::size_t i = 0; i < N * N; ++i) {
    diff[i] = double(noisy.data[i * 3]) - double(img.data[i * 3]);  // channel 0
  }
  // brute-force 2-D DFT power spectrum
  std::vector<double> power(N * N, 0.0);
  for (std::size_t v = 0; v < N; ++v) {
    for (std::size_t u = 0; u < N; ++u) {
      std::complex<double> acc(0.0, 0.0);
      for (std::size_t y = 0; y < N; ++y) {
        for (std::size_t x = 0; x < N; ++x) {
          const double ang = -2.0 * 3.141592653589793 *
                             (double(u * x) / double(N) + double(v * y) / double(N));
          acc += diff[y * N + x] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
      }
      power[v * N + u] = std::norm(acc);
    }
  }
  // radial average and log-log fit over f in [2, N/2)
  std::vector<double> log_f, log_p;
  for (std::size_t f = 2; f < N / 2; ++f) {
    double acc = 0.0;
    std::size_t cnt = 0;
    for (std::size_t v = 0; v < N; ++v) {
      for (std::size_t u = 0; u < N; ++u) {
        const double fy = double(std::min(v, N - v));
        const double fx = double(std::min(u, N - u));
        const double fr = std::sqrt(fx * fx + fy * fy);
        if (fr >= double(f) && fr < double(f + 1)) {
          acc += power[v * N + u];
          ++cnt;
        }
      }
    }
    if (cnt > 0 && acc > 0.0) {
      log_f.push_back(std::log(double(f)));
      log_p.push_back(std::log(acc / double(cnt)));
    }
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = double(log_f.size());
  for (std::size_t i = 0; i < log_f.size(); ++i) {
    sx += log_f[i];
    sy += log_p[i];
    sxx += log_f[i] * log_f[i];
    sxy += log_f[i] * log_p[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  REQUIRE(slope >= -1.4);
  REQUIRE(slope <= -0.6);
}

TEST_CASE("dataset generation writes a resolvable manifest and reloads exactly") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "imlkit_test_dataset";
  fs::remove_all(dir);
  auto ds = imlkit::generate_dataset(dir.string(), 7, 2024, 64);
  REQUIRE(ds.entries.size() == 7);
  imlkit::validate_dataset(ds);

  auto reloaded = imlkit::load_dataset(dir.string());
  REQUIRE(reloaded.entries.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) {
    auto s = imlkit::load_sample(reloaded, i);
    // regenerate from the manifest seed and compare
    auto expected =
        imlkit::gen_tampered(reloaded.entries[i].seed,
                             imlkit::tamper_kind_from(reloaded.entries[i].kind), 64);
    REQUIRE(s.image == expected.image);
    REQUIRE(s.mask == expected.mask);
  }
  fs::remove_all(dir);
}
