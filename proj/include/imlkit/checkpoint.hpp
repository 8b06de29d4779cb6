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

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "imlkit/config.hpp"
#include "imlkit/errors.hpp"
#include "imlkit/model.hpp"

namespace imlkit {

// Container layout: 8-byte magic, u64 manifest length (little endian), JSON
// manifest, then the raw little-endian tensor payloads back to back. The
// manifest records name/shape/precision/frozen per tensor plus the resolved
// model configuration needed to rebuild the module tree.
namespace ckpt_detail {

constexpr char kMagic[8] = {'I', 'M', 'L', 'C', 'K', 'P', 'T', '1'};

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

inline nlohmann::json model_config_json(const ModelConfig& m) {
  nlohmann::json j;
  j["image_size"] = m.image_size;
  j["patch_size"] = m.patch_size;
  j["embed_dim"] = m.embed_dim;
  j["depths"] = m.depths;
  j["window"] = m.window;
  j["head_dim"] = m.head_dim;
  j["mlp_ratio"] = m.mlp_ratio;
  j["prompts_per_window"] = m.prompts_per_window;
  j["prompt_init_range"] = m.prompt_init_range;
  j["ln_eps"] = m.ln_eps;
  j["use_sem"] = m.use_sem;
  j["use_hp"] = m.use_hp;
  j["use_align"] = m.use_align;
  j["use_fuse"] = m.use_fuse;
  j["faf_heads"] = m.faf_heads;
  j["faf_points"] = m.faf_points;
  j["faf_offset_scale_init"] = m.faf_offset_scale_init;
  j["decoder_dim"] = m.decoder_dim;
  j["decoder_heads"] = m.decoder_heads;
  j["decoder_rounds"] = m.decoder_rounds;
  j["decoder_mask_threshold"] = m.decoder_mask_threshold;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.image_size = j.at("image_size").get<std::size_t>();
  m.patch_size = j.at("patch_size").get<std::size_t>();
  m.embed_dim = j.at("embed_dim").get<std::size_t>();
  m.depths = j.at("depths").get<std::vector<std::size_t>>();
  m.window = j.at("window").get<std::size_t>();
  m.head_dim = j.at("head_dim").get<std::size_t>();
  m.mlp_ratio = j.at("mlp_ratio").get<double>();
  m.prompts_per_window = j.at("prompts_per_window").get<std::size_t>();
  m.prompt_init_range = j.at("prompt_init_range").get<double>();
  m.ln_eps = j.at("ln_eps").get<double>();
  m.use_sem = j.at("use_sem").get<bool>();
  m.use_hp = j.at("use_hp").get<bool>();
  m.use_align = j.at("use_align").get<bool>();
  m.use_fuse = j.at("use_fuse").get<bool>();
  m.faf_heads = j.at("faf_heads").get<std::size_t>();
  m.faf_points = j.at("faf_points").get<std::size_t>();
  m.faf_offset_scale_init = j.at("faf_offset_scale_init").get<double>();
  m.decoder_dim = j.at("decoder_dim").get<std::size_t>();
  m.decoder_heads = j.at("decoder_heads").get<std::size_t>();
  m.decoder_rounds = j.at("decoder_rounds").get<std::size_t>();
  m.decoder_mask_threshold = j.at("decoder_mask_threshold").get<double>();
  m.validate();
  return m;
}

}  // namespace ckpt_detail

template <typename T>
inline void save_checkpoint(const std::string& path, const Model<T>& model) {
  using namespace ckpt_detail;
  const auto params = model.params();
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["model"] = model_config_json(model.config());
  manifest["backbone_frozen"] = model.backbone_frozen();
  manifest["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& p : params) {
    manifest["tensors"].push_back({{"name", p.name},
                                   {"shape", p.tensor.shape()},
                                   {"dtype", dtype_name<T>()},
                                   {"frozen", p.frozen},
                                   {"offset", offset},
                                   {"count", p.tensor.size()}});
    offset += p.tensor.size() * sizeof(T);
  }
  const std::string mjson = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, 8);
  const std::uint64_t mlen = mjson.size();
  out.write(reinterpret_cast<const char*>(&mlen), 8);
  out.write(mjson.data(), std::streamsize(mjson.size()));
  for (const auto& p : params) {
    out.write(reinterpret_cast<const char*>(p.tensor.value().data()),
              std::streamsize(p.tensor.size() * sizeof(T)));
  }
  if (!out) throw DataError("short write on checkpoint: " + path);
}

// Rebuilds the model recorded in the checkpoint and fills in every tensor.
// Shapes are validated against the stored configuration.
template <typename T>
inline Model<T> load_checkpoint(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  std::uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), 8);
  std::string mjson(mlen, '\0');
  in.read(mjson.data(), std::streamsize(mlen));
  if (!in) throw DataError("truncated checkpoint manifest: " + path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mjson);
  } catch (const std::exception& e) {
    throw DataError(std::string("checkpoint manifest parse error: ") + e.what());
  }
  if (manifest.value("version", 0) != 1) {
    throw DataError("unsupported checkpoint version in " + path);
  }

  Model<T> model(model_config_from_json(manifest.at("model")), /*seed=*/0);
  auto params = model.params();

  std::size_t index = 0;
  for (const auto& t : manifest.at("tensors")) {
    if (index >= params.size()) throw DataError("checkpoint has more tensors than the model");
    auto& p = params[index++];
    const std::string name = t.at("name").get<std::string>();
    if (name != p.name) {
      throw DataError("checkpoint tensor order mismatch: expected " + p.name + ", found " + name);
    }
    const auto shape = t.at("shape").get<Shape>();
    if (shape != p.tensor.shape()) {
      throw DataError("checkpoint shape mismatch for " + name + ": stored " + shape_str(shape) +
                      ", model expects " + shape_str(p.tensor.shape()));
    }
    if (t.at("dtype").get<std::string>() != dtype_name<T>()) {
      throw DataError("checkpoint precision mismatch for " + name);
    }
    in.read(reinterpret_cast<char*>(p.tensor.value().data()),
            std::streamsize(p.tensor.size() * sizeof(T)));
    if (!in) throw DataError("truncated checkpoint payload at " + name);
  }
  if (index != params.size()) throw DataError("checkpoint is missing tensors");

  if (manifest.value("backbone_frozen", false)) model.freeze_backbone();
  model.project_constraints();
  return model;
}

}  // namespace imlkit
