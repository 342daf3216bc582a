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
// Base training with 2-way contrastive episodes: each query image is paired
// with a support set of a category it contains (c1) and one it does not
// (c2). The box classifier learns to accept c1 regions and reject everything
// against c2; the box regressor is trained only on regions matched to c1.
#ifndef IRFSOD_TRAINING_H_
#define IRFSOD_TRAINING_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "irfsod/data.h"
#include "irfsod/model.h"

namespace irfsod {

struct ContrastiveEpisode {
  int64_t query_id = 0;
  int positive_category = 0;  // c1, present in the query
  int negative_category = 0;  // c2, absent from the query
  SupportSet positive_support;
  SupportSet negative_support;
};

// Returns nullopt (a skip, not an error) when the query has no category with
// `shots` instances elsewhere, or no absent base category has enough.
// Support instances never come from the query image.
std::optional<ContrastiveEpisode> build_contrastive_episode(const ImageRecord& query,
                                                            const DatasetSplit& base, int shots,
                                                            Rng& rng);

struct LossBundle {
  double rpn_cls = 0.0;
  double rpn_reg = 0.0;
  double cls = 0.0;
  double reg = 0.0;
  double total = 0.0;

  double rpn() const { return rpn_cls + rpn_reg; }
};

// total = (rpn_cls + rpn_reg) + cls + reg. Throws NumericalError if any
// component is not finite.
LossBundle total_loss(double rpn_cls, double rpn_reg, double cls, double reg);

// Proposals with IoU >= pos_iou against a c1 box are labeled 1 against the
// c1 prototype; everything else is 0 against c1 and every proposal is 0
// against c2. Mean binary cross-entropy over all 2n pairings.
double roi_classification_loss(std::span<const Box> proposals,
                               std::span<const double> scores_c1,
                               std::span<const double> scores_c2,
                               std::span<const Box> c1_boxes, double pos_iou);

// Smooth-L1 between predicted deltas and encode_delta(best c1 box, proposal)
// summed over coordinates and averaged over proposals matched to c1. Zero
// when nothing matches.
double roi_regression_loss(std::span<const Box> proposals, std::span<const BoxDelta> predicted,
                           std::span<const Box> c1_boxes, double pos_iou);

// One sampled region for the second stage.
struct RoiSample {
  Box box;
  bool foreground = false;        // matched to a c1 box
  std::optional<Box> matched_gt;  // set for foreground
  int multi_label = 0;            // 0 background, else index+1 into base categories
};

// Every discrete decision of a training step, frozen so the loss is a
// smooth function of the parameters (used by the gradient checks).
struct StepPlan {
  ContrastiveEpisode episode;
  AnchorBatch anchors;  // labels and matched_gt fixed
  std::vector<size_t> sampled_anchors;
  std::vector<RoiSample> rois;
  size_t pseudo_positives = 0;
};

// Runs the current model on the episode to label anchors (including pseudo
// positives), pick proposals, and sample RoIs.
StepPlan plan_step(const Detector& model, const ContrastiveEpisode& episode,
                   const DatasetSplit& base, ImageStore& images, Rng& rng);

// Loss of a planned step; with `backward` set, accumulates parameter
// gradients scaled by `grad_scale`.
LossBundle evaluate_step(Detector& model, const StepPlan& plan, const DatasetSplit& base,
                         ImageStore& images, bool backward, double grad_scale = 1.0);

struct TrainLogRecord {
  int iteration = 0;
  LossBundle loss;
  double lr = 0.0;
  size_t pseudo_positives = 0;
  double grad_norm = 0.0;  // before clipping
};

using TrainLogger = std::function<void(const TrainLogRecord&)>;

// Newline-delimited JSON: {"iteration", "L_rpn", "L_cls", "L_reg", "total", "lr",
// "pseudo_positives", "grad_norm"}.
std::string format_log_record(const TrainLogRecord& record);

// SGD with momentum and weight decay on the episode loss, step-decay
// schedule. Deterministic for a fixed config seed.
class SgdOptimizer {
 public:
  SgdOptimizer(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(ParamRefs params, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

struct TrainResult {
  std::vector<TrainLogRecord> log;
  int skipped_queries = 0;
};

// Scales every gradient so their joint L2 norm is at most `max_norm` (0
// disables). Returns the norm before scaling.
double clip_gradients(ParamRefs params, double max_norm);

// Trains on the base split (annotations of novel categories must already be
// filtered out). Throws NumericalError on divergence.
TrainResult train(Detector& model, const DatasetSplit& base, ImageStore& images,
                  const TrainLogger& logger = {});

// Runs `iterations` optimizer steps on one fixed planned episode.
std::vector<LossBundle> train_on_plan(Detector& model, const StepPlan& plan,
                                      const DatasetSplit& base, ImageStore& images,
                                      int iterations, double lr);

// Versioned binary checkpoint: "IRFSOD" magic, format version, config
// snapshot, named parameter blobs with shapes, trailing checksum.
inline constexpr uint32_t kCheckpointVersion = 1;
void save_checkpoint(const Detector& model, const std::filesystem::path& path);
Detector load_checkpoint(const std::filesystem::path& path);

}  // namespace irfsod

#endif  // IRFSOD_TRAINING_H_
