// Copyright 2026 The irfsod Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// irfsod train | detect | eval | make-shapes
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "irfsod/data.h"
#include "irfsod/errors.h"
#include "irfsod/eval.h"
#include "irfsod/training.h"

namespace fs = std::filesystem;
using namespace irfsod;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

SplitSpec resolve_split(const DataConfig& data, const fs::path& annotations) {
  if (data.split == "coco_voc20") return coco_voc20_split();
  return split_from_metadata(annotations);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

// Inference-time keys that may differ from the trained configuration.
void apply_inference_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  static const std::set<std::string> allowed = {
      "heads.alpha",          "heads.lambda",         "heads.score_threshold",
      "heads.detection_nms",  "heads.max_detections", "ablation.classifier",
      "ablation.pixel_contrast", "rpn.pre_nms_top_n", "rpn.post_nms_top_n",
      "rpn.nms_threshold",    "rpn.min_box_size",     "data.train_annotations",
      "data.test_annotations"};
  cfg.forget_explicit_keys();
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw UsageError("override must be key=value: " + o);
    std::string key = o.substr(0, eq);
    key.erase(std::remove_if(key.begin(), key.end(), ::isspace), key.end());
    if (!allowed.count(key)) {
      throw UsageError("key " + key + " is fixed by the checkpoint and cannot be overridden");
    }
    cfg.set(key, o.substr(eq + 1));
  }
  cfg.validate();
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out = "model.ckpt";
  std::string log;
  int progress_every = 100;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = RunConfig::from_file(a.config);
  cfg.apply_overrides(a.overrides);
  cfg.validate();
  if (cfg.data.train_annotations.empty()) throw UsageError("data.train_annotations is not set");
  const SplitSpec split = resolve_split(cfg.data, cfg.data.train_annotations);
  const DatasetSplit base = load_coco_annotations(cfg.data.train_annotations, split, SplitRole::kBase);
  if (cfg.data.base_categories.empty()) {
    std::vector<int> cats = split.base;
    std::sort(cats.begin(), cats.end());
    std::string text;
    for (int c : cats) text += (text.empty() ? "" : ",") + std::to_string(c);
    cfg.set("data.base_categories", text);
  }
  cfg.validate();
  std::cout << "# resolved config\n" << cfg.to_text() << std::flush;

  Detector model(cfg);
  model.init(cfg.train.seed);
  ImageStore images(base.image_root);
  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log);
    if (!log) throw DataError("cannot write log " + a.log);
  }
  const auto start = std::chrono::steady_clock::now();
  const TrainResult result = train(model, base, images, [&](const TrainLogRecord& rec) {
    const std::string line = format_log_record(rec);
    if (log) log << line << "\n";
    if (a.progress_every > 0 && (rec.iteration % a.progress_every == 0 ||
                                 rec.iteration + 1 == cfg.train.iterations)) {
      std::cerr << line << "\n";
    }
  });
  save_checkpoint(model, a.out);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cerr << "trained " << result.log.size() << " iterations in " << secs << " s ("
            << result.skipped_queries << " queries skipped); checkpoint " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct DetectArgs {
  std::string checkpoint;
  std::string supports;
  std::vector<std::string> images;
  std::vector<std::string> overrides;
  std::string out;
};

int64_t image_id_for(const fs::path& path, size_t index) {
  const std::string stem = path.stem().string();
  if (!stem.empty() && std::all_of(stem.begin(), stem.end(), ::isdigit) && stem.size() < 18) {
    return std::stoll(stem);
  }
  return static_cast<int64_t>(index) + 1;
}

int cmd_detect(const DetectArgs& a) {
  Detector model = load_checkpoint(a.checkpoint);
  apply_inference_overrides(model.mutable_config(), a.overrides);
  const auto folders = read_support_dir(a.supports);
  const auto start = std::chrono::steady_clock::now();
  const auto protos = encode_support_folders(model, folders);
  std::vector<ImageDetection> all;
  for (size_t i = 0; i < a.images.size(); ++i) {
    const Image image = read_image(a.images[i]);
    const int64_t id = image_id_for(a.images[i], i);
    for (const auto& d : detect(model, image, protos)) all.push_back({id, d});
    std::cerr << "image_id " << id << " <- " << a.images[i] << "\n";
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const std::string json = coco_results_json(all);
  if (a.out.empty()) {
    std::cout << json << "\n";
  } else {
    write_text(a.out, json + "\n");
  }
  std::cerr << all.size() << " detections on " << a.images.size() << " images in " << secs
            << " s (no parameter updates)\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string protocol = "onetime";
  std::vector<std::string> overrides;
  std::string supports;  // support folders for onetime; default: sample from train data
  int ways = 2;
  int shots = 10;
  int episodes = 1000;
  int queries = 10;
  uint64_t seed = 0;
  std::string out;
  std::string detections;
};

int cmd_eval(const EvalArgs& a) {
  if (a.protocol != "onetime" && a.protocol != "meta") {
    throw UsageError("unknown protocol '" + a.protocol + "' (expected onetime or meta)");
  }
  Detector model = load_checkpoint(a.checkpoint);
  apply_inference_overrides(model.mutable_config(), a.overrides);
  const RunConfig& cfg = model.config();
  if (cfg.data.test_annotations.empty()) throw UsageError("data.test_annotations is not set");
  const SplitSpec split = resolve_split(cfg.data, cfg.data.test_annotations);
  const DatasetSplit test = load_coco_annotations(cfg.data.test_annotations, split, SplitRole::kNovel);
  ImageStore test_images(test.image_root);

  EvalResult result;
  if (a.protocol == "onetime") {
    std::vector<SupportFeature> protos;
    if (!a.supports.empty()) {
      protos = encode_support_folders(model, read_support_dir(a.supports));
    } else {
      if (cfg.data.train_annotations.empty()) throw UsageError("data.train_annotations is not set");
      const DatasetSplit pool =
          load_coco_annotations(cfg.data.train_annotations, split, SplitRole::kNovel);
      ImageStore pool_images(pool.image_root);
      Rng rng(a.seed);
      const auto sets = sample_support_sets(pool, split.novel, a.shots, rng);
      protos = encode_supports(model, sets, pool, pool_images);
    }
    std::vector<ImageDetection> dets;
    result = one_time_protocol(model, protos, test, test_images, &dets);
    if (!a.detections.empty()) write_text(a.detections, coco_results_json(dets) + "\n");
  } else {
    if (cfg.data.train_annotations.empty()) throw UsageError("data.train_annotations is not set");
    const DatasetSplit pool =
        load_coco_annotations(cfg.data.train_annotations, split, SplitRole::kNovel);
    ImageStore pool_images(pool.image_root);
    MetaTestOptions opt{a.ways, a.shots, a.episodes, a.queries, a.seed};
    result = meta_testing(model, pool, test, pool_images, test_images, opt).summary;
  }
  std::cout << "protocol = " << a.protocol << "\n" << metrics_text(result);
  if (!a.out.empty()) write_text(a.out, metrics_json(result) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------

struct ShapesArgs {
  std::string out;
  std::string spec;
  std::vector<std::string> overrides;
  uint64_t seed = 0;
  int test_images = 100;
  int support_shots = 10;
};

int cmd_make_shapes(const ShapesArgs& a) {
  ShapesSpec spec;
  if (!a.spec.empty()) {
    std::ifstream in(a.spec);
    if (!in) throw UsageError("cannot read shapes spec: " + a.spec);
    std::string line;
    while (std::getline(in, line)) {
      line = line.substr(0, line.find('#'));
      const auto eq = line.find('=');
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      if (eq == std::string::npos) throw UsageError("spec line is not 'key = value': " + line);
      std::string key = line.substr(0, eq);
      key.erase(std::remove_if(key.begin(), key.end(), ::isspace), key.end());
      spec.set(key, line.substr(eq + 1));
    }
  }
  for (const auto& o : a.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw UsageError("override must be key=value: " + o);
    spec.set(o.substr(0, eq), o.substr(eq + 1));
  }
  spec.validate();
  if (a.test_images < 0) throw UsageError("--test-images must be >= 0");

  const fs::path dir = a.out;
  const ShapesDataset train = generate_shapes_dataset(spec, a.seed);
  const auto train_path = write_shapes_dataset(train, dir, "train.json");
  std::cout << "wrote " << train.images.size() << " training images, " << train_path.string() << "\n";
  if (a.test_images > 0) {
    ShapesSpec test_spec = spec;
    test_spec.num_images = a.test_images;
    test_spec.first_image_id = spec.first_image_id + spec.num_images;
    const ShapesDataset test = generate_shapes_dataset(test_spec, Rng::derive(a.seed, 1).next());
    const auto test_path = write_shapes_dataset(test, dir, "test.json");
    std::cout << "wrote " << test.images.size() << " test images, " << test_path.string() << "\n";
  }
  if (a.support_shots > 0) {
    const DatasetSplit novel = filter_role(train.split, SplitRole::kNovel);
    ImageStore store;
    for (size_t i = 0; i < train.images.size(); ++i) store.put(train.split.records[i].id, train.images[i]);
    Rng rng = Rng::derive(a.seed, 2);
    const auto sets = sample_support_sets(novel, novel.novel_categories, a.support_shots, rng);
    write_support_dir(novel, sets, store, dir / "supports");
    std::cout << "wrote " << a.support_shots << "-shot supports for " << sets.size()
              << " novel categories, " << (dir / "supports").string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instant-response few-shot object detector"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Base training with contrastive episodes");
  train_cmd->add_option("-c,--config", ta.config, "Config file (key = value)")->required();
  train_cmd->add_option("--set", ta.overrides, "Override, key=value (repeatable)")
      ->expected(1)
      ->allow_extra_args(false)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  train_cmd->add_option("-o,--out", ta.out, "Checkpoint path")->capture_default_str();
  train_cmd->add_option("--log", ta.log, "Training log (JSON lines)");
  train_cmd->add_option("--progress-every", ta.progress_every, "Echo every N iterations (0: off)")
      ->capture_default_str();

  DetectArgs da;
  auto* detect_cmd = app.add_subcommand("detect", "Detect support categories in images");
  detect_cmd->add_option("-m,--checkpoint", da.checkpoint, "Checkpoint")->required();
  detect_cmd->add_option("-s,--supports", da.supports, "Support directory")->required();
  detect_cmd->add_option("images", da.images, "Query images")->required();
  detect_cmd->add_option("--set", da.overrides, "Inference override, key=value")
      ->expected(1)
      ->allow_extra_args(false)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  detect_cmd->add_option("-o,--out", da.out, "Detections JSON (default: stdout)");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate on novel categories");
  eval_cmd->add_option("-m,--checkpoint", ea.checkpoint, "Checkpoint")->required();
  eval_cmd->add_option("-p,--protocol", ea.protocol, "onetime or meta")->capture_default_str();
  eval_cmd->add_option("--set", ea.overrides, "Inference override, key=value")
      ->expected(1)
      ->allow_extra_args(false)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  eval_cmd->add_option("-s,--supports", ea.supports, "Support directory (onetime)");
  eval_cmd->add_option("--ways", ea.ways, "Categories per episode (meta)")->capture_default_str();
  eval_cmd->add_option("--shots", ea.shots, "Instances per support set")->capture_default_str();
  eval_cmd->add_option("--episodes", ea.episodes, "Episodes (meta)")->capture_default_str();
  eval_cmd->add_option("--queries", ea.queries, "Query images per category (meta)")
      ->capture_default_str();
  eval_cmd->add_option("--seed", ea.seed, "Sampling seed")->capture_default_str();
  eval_cmd->add_option("-o,--out", ea.out, "Metrics JSON");
  eval_cmd->add_option("--detections", ea.detections, "Detections JSON (onetime)");

  ShapesArgs sa;
  auto* shapes_cmd = app.add_subcommand("make-shapes", "Generate the synthetic shapes dataset");
  shapes_cmd->add_option("-o,--out", sa.out, "Output directory")->required();
  shapes_cmd->add_option("--spec", sa.spec, "Shapes spec file (shapes.* keys)");
  shapes_cmd->add_option("--set", sa.overrides, "Spec override, shapes.key=value")
      ->expected(1)
      ->allow_extra_args(false)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  shapes_cmd->add_option("--seed", sa.seed, "Generator seed")->capture_default_str();
  shapes_cmd->add_option("--test-images", sa.test_images, "Test images (0: none)")
      ->capture_default_str();
  shapes_cmd->add_option("--support-shots", sa.support_shots, "Novel support shots (0: none)")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(ta);
    if (*detect_cmd) return cmd_detect(da);
    if (*eval_cmd) return cmd_eval(ea);
    if (*shapes_cmd) return cmd_make_shapes(sa);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
