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
// Run configuration: a flat namespace of dotted keys ("heads.alpha") read
// from `key = value` text files and `--set key=value` overrides. Unknown keys
// are rejected.
#ifndef IRFSOD_CONFIG_H_
#define IRFSOD_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "irfsod/features.h"
#include "irfsod/heads.h"
#include "irfsod/ss_rpn.h"

namespace irfsod {

enum class ClassifierChoice {
  kDynamic,     // comparison head in training, distance score at inference
  kComparison,  // comparison head throughout
  kDistance,    // distance score throughout
  kMulti,       // softmax over base categories throughout
};

enum class ClassifierHead { kComparison, kDistance, kMulti };

const char* to_string(ClassifierChoice c);
const char* to_string(RegressorKind k);

struct AblationConfig {
  bool ss_rpn = true;
  bool pixel_contrast = true;
  RegressorKind regressor = RegressorKind::kSemiExplicit;
  ClassifierChoice classifier = ClassifierChoice::kDynamic;

  ClassifierHead train_head() const;
  ClassifierHead infer_head() const;
};

struct TrainConfig {
  int iterations = 5000;
  double learning_rate = 0.01;
  std::vector<int> milestones{3500, 4500};
  double gamma = 0.1;
  int batch_size = 1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  uint64_t seed = 0;
  int shots = 10;
  int warmup_iterations = 0;
  // Backpropagate through the support branch as well as the query branch.
  bool support_grad = true;
  // Global L2 bound on the gradient before each step; 0 disables.
  double clip_grad_norm = 10.0;

  // The 120k-iteration schedule of the full-scale COCO setting.
  static TrainConfig full_scale();
  double lr_at(int iteration) const;
  void validate() const;
};

struct DataConfig {
  std::string train_annotations;
  std::string test_annotations;
  // "metadata" reads the split from the annotation file's info block;
  // "coco_voc20" uses the built-in 60/20 COCO split.
  std::string split = "metadata";
  // Base categories known to the multi-class head, filled from the data.
  std::vector<int> base_categories;
};

struct RunConfig {
  BackboneConfig backbone;
  SsRpnConfig rpn;
  HeadConfig heads;
  TrainConfig train;
  AblationConfig ablation;
  DataConfig data;

  // Sets one dotted key from its text form; throws UsageError for unknown
  // keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  // Ordered key/value pairs, suitable for echoing and checkpoints.
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  std::string to_text() const;
  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::filesystem::path& path);
  // Applies "key=value" overrides in order.
  void apply_overrides(const std::vector<std::string>& overrides);

  // Treats every current value as a default again, e.g. after restoring a
  // snapshot, so later overrides are checked only against each other.
  void forget_explicit_keys() { explicit_keys_.clear(); }

  // Checks ranges and cross-key consistency.
  void validate() const;

  // Distance-score alpha after the ablation toggles (1 without pixel
  // contrast).
  double effective_alpha() const { return ablation.pixel_contrast ? heads.alpha : 1.0; }

 private:
  std::set<std::string> explicit_keys_;
};

}  // namespace irfsod

#endif  // IRFSOD_CONFIG_H_
