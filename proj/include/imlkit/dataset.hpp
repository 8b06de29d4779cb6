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

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "imlkit/datagen.hpp"
#include "imlkit/errors.hpp"
#include "imlkit/image.hpp"

namespace imlkit {

struct DatasetEntry {
  std::size_t id = 0;
  std::uint64_t seed = 0;
  std::string kind;
  std::string image_path;  // relative to the dataset root
  std::string mask_path;
};

struct Dataset {
  std::string root;
  std::size_t image_size = 64;
  std::vector<DatasetEntry> entries;

  std::size_t size() const { return entries.size(); }
};

inline std::string sample_file_name(std::size_t id) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << id << ".png";
  return os.str();
}

// Generates `count` tampered samples (tamper kinds round-robin) and writes
// images, masks and the manifest under `out_dir`.
inline Dataset generate_dataset(const std::string& out_dir, std::size_t count,
                                std::uint64_t seed, std::size_t image_size = 64) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  fs::create_directories(fs::path(out_dir) / "masks", ec);
  if (ec) throw DataError("cannot create dataset directories under " + out_dir);

  static const TamperKind kinds[3] = {TamperKind::kCopyMove, TamperKind::kSplice,
                                      TamperKind::kInpaint};
  Dataset ds;
  ds.root = out_dir;
  ds.image_size = image_size;
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["image_size"] = image_size;
  manifest["seed"] = seed;
  manifest["samples"] = nlohmann::json::array();

  for (std::size_t i = 0; i < count; ++i) {
    const TamperKind kind = kinds[i % 3];
    const std::uint64_t sample_seed = Rng(seed).fork(1000 + i).next_u64();
    Sample s = gen_tampered(sample_seed, kind, image_size);

    DatasetEntry e;
    e.id = i;
    e.seed = sample_seed;
    e.kind = tamper_kind_name(kind);
    e.image_path = "images/" + sample_file_name(i);
    e.mask_path = "masks/" + sample_file_name(i);

    write_png((fs::path(out_dir) / e.image_path).string(), s.image);
    ImageU8 mask_png = s.mask;
    for (auto& v : mask_png.data) v = v ? 255 : 0;
    write_png((fs::path(out_dir) / e.mask_path).string(), mask_png);

    manifest["samples"].push_back({{"id", e.id},
                                   {"seed", e.seed},
                                   {"kind", e.kind},
                                   {"image", e.image_path},
                                   {"mask", e.mask_path}});
    ds.entries.push_back(std::move(e));
  }

  std::ofstream out(fs::path(out_dir) / "manifest.json");
  if (!out) throw DataError("cannot write manifest under " + out_dir);
  out << manifest.dump(2) << "\n";
  return ds;
}

inline Dataset load_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  const auto manifest_path = fs::path(root) / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest: " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const std::exception& e) {
    throw DataError(std::string("manifest parse error: ") + e.what());
  }
  Dataset ds;
  ds.root = root;
  ds.image_size = manifest.value("image_size", 64);
  for (const auto& s : manifest.at("samples")) {
    DatasetEntry e;
    e.id = s.at("id").get<std::size_t>();
    e.seed = s.at("seed").get<std::uint64_t>();
    e.kind = s.at("kind").get<std::string>();
    e.image_path = s.at("image").get<std::string>();
    e.mask_path = s.at("mask").get<std::string>();
    ds.entries.push_back(std::move(e));
  }
  return ds;
}

struct LoadedSample {
  ImageU8 image;
  ImageU8 mask;  // values {0,1}
};

inline LoadedSample load_sample(const Dataset& ds, std::size_t index) {
  namespace fs = std::filesystem;
  const auto& e = ds.entries.at(index);
  LoadedSample s;
  s.image = read_png((fs::path(ds.root) / e.image_path).string());
  s.mask = read_png((fs::path(ds.root) / e.mask_path).string());
  if (s.mask.channels != 1) throw DataError("mask is not single-channel: " + e.mask_path);
  for (auto& v : s.mask.data) v = v >= 128 ? 1 : 0;
  if (s.image.width != s.mask.width || s.image.height != s.mask.height) {
    throw DataError("image/mask size mismatch for sample " + std::to_string(e.id));
  }
  return s;
}

// Checks that every manifest entry resolves to a readable file.
inline void validate_dataset(const Dataset& ds) {
  namespace fs = std::filesystem;
  for (const auto& e : ds.entries) {
    for (const auto& rel : {e.image_path, e.mask_path}) {
      const auto p = fs::path(ds.root) / rel;
      if (!fs::exists(p)) throw DataError("manifest entry missing on disk: " + p.string());
    }
  }
}

}  // namespace imlkit
