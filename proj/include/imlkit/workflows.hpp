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
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "imlkit/checkpoint.hpp"
#include "imlkit/config.hpp"
#include "imlkit/dataset.hpp"
#include "imlkit/errors.hpp"
#include "imlkit/train.hpp"
#include "imlkit/verify.hpp"

namespace imlkit {

// Batch workflows behind the CLI subcommands. Every run writes a resolved
// configuration snapshot next to its outputs so it can be diffed and
// replayed exactly.

namespace workflow_detail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory: " + dir);
}

inline void write_snapshot(const std::string& out_dir, const KVConfig& cfg) {
  std::ofstream out(std::filesystem::path(out_dir) / "resolved.cfg");
  if (!out) throw DataError("cannot write config snapshot under " + out_dir);
  out << cfg.serialize();
}

inline std::vector<LoadedSample> load_all(const Dataset& ds) {
  std::vector<LoadedSample> samples;
  samples.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) samples.push_back(load_sample(ds, i));
  return samples;
}

inline ImageU8 probs_to_image(const std::vector<double>& probs, std::size_t size,
                              std::optional<double> threshold) {
  ImageU8 img(size, size, 1);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    img.data[i] = threshold ? (probs[i] > *threshold ? 255 : 0) : quantize_u8(probs[i] * 255.0);
  }
  return img;
}

}  // namespace workflow_detail

inline int run_gen(const KVConfig& cfg, std::size_t count, std::uint64_t seed,
                   const std::string& out_dir) {
  using namespace workflow_detail;
  ensure_dir(out_dir);
  const auto image_size = static_cast<std::size_t>(cfg.get_int("model.image_size", 64));
  auto ds = generate_dataset(out_dir, count, seed, image_size);
  validate_dataset(ds);
  write_snapshot(out_dir, cfg);
  std::cout << "wrote " << ds.size() << " samples to " << out_dir << "\n";
  return kExitOk;
}

inline int run_train(const KVConfig& cfg, const std::string& data_dir,
                     const std::string& out_dir) {
  using namespace workflow_detail;
  ensure_dir(out_dir);
  const ModelConfig mcfg = ModelConfig::from(cfg);
  const TrainConfig tcfg = TrainConfig::from(cfg);

  auto ds = load_dataset(data_dir);
  auto samples = load_all(ds);
  Model<float> model = build_model<float>(mcfg, tcfg.seed, &samples);

  const std::string checksum_before = model.backbone_checksum();
  auto log = train_model(model, samples, tcfg);
  const std::string checksum_after = model.backbone_checksum();
  if (mcfg.use_sem && checksum_before != checksum_after) {
    throw VerifyError("frozen backbone changed during training");
  }

  namespace fs = std::filesystem;
  save_checkpoint((fs::path(out_dir) / "checkpoint.imlkit").string(), model);
  {
    std::ofstream losslog(fs::path(out_dir) / "loss_log.csv");
    losslog << "step,lr,loss\n";
    losslog.precision(12);
    for (const auto& e : log) losslog << e.step << "," << e.lr << "," << e.loss << "\n";
  }
  {
    std::ofstream summary(fs::path(out_dir) / "train_summary.txt");
    summary << "steps = " << log.size() << "\n";
    summary << "final_loss = " << (log.empty() ? 0.0 : log.back().loss) << "\n";
    summary << "frozen_checksum_before = " << checksum_before << "\n";
    summary << "frozen_checksum_after = " << checksum_after << "\n";
  }
  write_snapshot(out_dir, cfg);
  std::cout << "trained " << log.size() << " steps, final loss "
            << (log.empty() ? 0.0 : log.back().loss) << "\n";
  return kExitOk;
}

struct EvalOptions {
  std::optional<PerturbKind> kind;  // single perturbation
  std::optional<int> severity;
  bool sweep = false;               // all kinds x severities 0..9
  std::uint64_t seed = 1;
};

inline int run_eval(const KVConfig& cfg, const std::string& checkpoint_path,
                    const std::string& data_dir, const std::string& out_dir,
                    const EvalOptions& opts) {
  using namespace workflow_detail;
  ensure_dir(out_dir);
  const PerturbLadders ladders = PerturbLadders::from(cfg);
  Model<float> model = load_checkpoint<float>(checkpoint_path);

  auto ds = load_dataset(data_dir);
  auto samples = load_all(ds);
  const std::string dataset_name =
      std::filesystem::path(data_dir).filename().string().empty()
          ? data_dir
          : std::filesystem::path(data_dir).filename().string();

  std::vector<ReportRow> rows;
  auto clean = evaluate(model, samples);
  rows.push_back({dataset_name, "none", 0, clean.f1, clean.auc});

  // predicted masks for the clean pass
  namespace fs = std::filesystem;
  ensure_dir((fs::path(out_dir) / "pred").string());
  for (std::size_t i = 0; i < clean.probs.size(); ++i) {
    write_png((fs::path(out_dir) / "pred" / ("mask_" + sample_file_name(i))).string(),
              probs_to_image(clean.probs[i], ds.image_size, 0.5));
    write_png((fs::path(out_dir) / "pred" / ("prob_" + sample_file_name(i))).string(),
              probs_to_image(clean.probs[i], ds.image_size, std::nullopt));
  }

  if (opts.sweep) {
    for (auto kind : all_perturb_kinds()) {
      for (int s = 0; s <= 9; ++s) {
        auto perturbed = perturb_samples(samples, kind, s, opts.seed, ladders);
        auto r = evaluate(model, perturbed);
        rows.push_back({dataset_name, perturb_kind_name(kind), s, r.f1, r.auc});
      }
    }
  } else if (opts.kind) {
    const int s = opts.severity.value_or(0);
    auto perturbed = perturb_samples(samples, *opts.kind, s, opts.seed, ladders);
    auto r = evaluate(model, perturbed);
    rows.push_back({dataset_name, perturb_kind_name(*opts.kind), s, r.f1, r.auc});
  }

  write_report_csv((fs::path(out_dir) / "report.csv").string(), rows);
  write_snapshot(out_dir, cfg);
  std::cout << "clean F1 " << clean.f1 << ", AUC " << clean.auc << " over " << samples.size()
            << " samples; " << rows.size() << " report rows\n";
  return kExitOk;
}

inline int run_infer(const KVConfig& cfg, const std::string& checkpoint_path,
                     const std::string& image_path, const std::string& out_dir) {
  using namespace workflow_detail;
  ensure_dir(out_dir);
  Model<float> model = load_checkpoint<float>(checkpoint_path);
  ImageU8 image = read_png(image_path);
  if (image.channels != 3) throw DataError("infer: expected an RGB image");
  if (image.width != model.config().image_size || image.height != model.config().image_size) {
    throw DataError("infer: image is " + std::to_string(image.width) + "x" +
                    std::to_string(image.height) + " but the checkpoint expects " +
                    std::to_string(model.config().image_size));
  }
  NoGradGuard no_grad;
  std::vector<const ImageU8*> batch = {&image};
  auto logits = model.forward(batch_to_tensor<float>(batch));
  std::vector<double> probs(logits.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    probs[i] = 1.0 / (1.0 + std::exp(-double(logits.value()[i])));
  }
  namespace fs = std::filesystem;
  write_png((fs::path(out_dir) / "mask.png").string(),
            probs_to_image(probs, image.width, 0.5));
  write_png((fs::path(out_dir) / "prob.png").string(),
            probs_to_image(probs, image.width, std::nullopt));
  write_snapshot(out_dir, cfg);
  std::cout << "wrote mask.png and prob.png to " << out_dir << "\n";
  return kExitOk;
}

inline int run_gradcheck() {
  auto results = run_gradient_suite();
  std::size_t failures = 0;
  for (const auto& r : results) {
    std::cout << (r.pass() ? "[ok]   " : "[FAIL] ") << r.name << "  max_rel_err=" << r.max_rel_err
              << "  tol=" << r.tolerance << "\n";
    failures += r.pass() ? 0 : 1;
  }
  std::cout << results.size() - failures << "/" << results.size() << " gradient checks passed\n";
  return failures == 0 ? kExitOk : kExitVerify;
}

inline int run_ablate(const KVConfig& cfg, const std::string& data_dir,
                      const std::string& out_dir) {
  using namespace workflow_detail;
  ensure_dir(out_dir);
  const ModelConfig base = ModelConfig::from(cfg);
  const TrainConfig tcfg = TrainConfig::from(cfg);
  const auto steps = static_cast<std::size_t>(cfg.get_int("ablate.steps", 120));

  auto ds = load_dataset(data_dir);
  auto samples = load_all(ds);
  auto rows = run_ablation<float>(AblationSetting::standard_grid(), samples, base, tcfg, steps);

  const std::string table = ablation_table_csv(rows);
  std::ofstream out(std::filesystem::path(out_dir) / "ablation.csv");
  if (!out) throw DataError("cannot write ablation table under " + out_dir);
  out << table;
  write_snapshot(out_dir, cfg);
  std::cout << table;
  return kExitOk;
}

}  // namespace imlkit
