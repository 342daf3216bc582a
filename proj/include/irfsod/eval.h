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
// Instant-response inference and few-shot evaluation. Nothing in this file
// writes model parameters: every entry point takes the detector by const
// reference and novel categories are defined only by support prototypes.
#ifndef IRFSOD_EVAL_H_
#define IRFSOD_EVAL_H_

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "irfsod/data.h"
#include "irfsod/model.h"

namespace irfsod {

inline constexpr size_t kNumMetrics = 12;
inline constexpr std::array<std::string_view, kNumMetrics> kMetricNames = {
    "AP", "AP50", "AP75", "AP_S", "AP_M", "AP_L",
    "AR1", "AR10", "AR100", "AR_S", "AR_M", "AR_L"};

struct EvalResult {
  std::array<double, kNumMetrics> metrics{};
  // 95% half-widths; absent for a single evaluation.
  std::optional<std::array<double, kNumMetrics>> ci_half_width;
  int episodes = 1;
  double seconds_per_episode = 0.0;

  double metric(std::string_view name) const;
  double ap() const { return metrics[0]; }
  double ap50() const { return metrics[1]; }
};

struct GroundTruth {
  int64_t image_id = 0;
  int category = 0;
  Box box;
};

struct ImageDetection {
  int64_t image_id = 0;
  Detection det;
};

struct ApParams {
  std::vector<double> iou_thresholds;  // empty: 0.50:0.05:0.95
  std::array<int, 3> max_dets{1, 10, 100};
};

// COCO-style box AP/AR: greedy score-ordered matching per (image, category),
// 101-point interpolated precision, size buckets at 32^2 and 96^2 pixels.
// Metrics with no ground truth to score are reported as 0.
EvalResult compute_ap(std::span<const ImageDetection> detections,
                      std::span<const GroundTruth> gts, const ApParams& params = {});

// Prototypes for each support set, computed with the current backbone.
std::vector<SupportFeature> encode_supports(const Detector& model,
                                            std::span<const SupportSet> sets,
                                            const DatasetSplit& source, ImageStore& images);

std::vector<SupportFeature> encode_support_folders(const Detector& model,
                                                   std::span<const SupportFolder> folders);

// Full pipeline with the inference-time classifier selected by the config.
// Throws UsageError when `supports` is empty.
std::vector<Detection> detect(const Detector& model, const Image& image,
                              std::span<const SupportFeature> supports);
std::vector<Detection> detect(const Detector& model, const Image& image,
                              std::span<const SupportFeature> supports, ClassifierHead head);

std::vector<GroundTruth> ground_truth_of(std::span<const ImageRecord> records,
                                         std::span<const int> categories);

// Detects every test image once with supports for all novel categories.
// Throws UsageError if a novel category present in `test` has no support.
EvalResult one_time_protocol(const Detector& model, std::span<const SupportFeature> supports,
                             const DatasetSplit& test, ImageStore& images,
                             std::vector<ImageDetection>* detections_out = nullptr);

struct MetaTestOptions {
  int ways = 2;
  int shots = 10;
  int episodes = 1000;
  int queries_per_category = 10;
  uint64_t seed = 0;
};

struct MetaTestResult {
  EvalResult summary;  // per-metric mean with CI
  std::vector<EvalResult> per_episode;
};

// Episode i draws its categories, queries and supports from
// Rng::derive(seed, i) alone. Supports come from `support_pool` and never
// share an image with the episode's queries; queries are distinct images.
MetaTestResult meta_testing(const Detector& model, const DatasetSplit& support_pool,
                            const DatasetSplit& test, ImageStore& pool_images,
                            ImageStore& test_images, const MetaTestOptions& options);

// Mean and 1.96 * sample std / sqrt(n) per metric.
EvalResult summarize(std::span<const EvalResult> results);

// Half-width of the normal-approximation 95% interval; nullopt for n < 2.
std::optional<double> ci_half_width(std::span<const double> values);

std::string coco_results_json(std::span<const ImageDetection> detections);
std::string metrics_json(const EvalResult& result);
std::string metrics_text(const EvalResult& result);

}  // namespace irfsod

#endif  // IRFSOD_EVAL_H_
