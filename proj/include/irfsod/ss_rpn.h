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
// Region proposal network with pseudo-positive anchor labels. Negative
// anchors whose predicted objectness exceeds tau are treated as unlabeled
// objects and trained toward foreground, so regions of categories that are
// never annotated during base training are not learned as background.
#ifndef IRFSOD_SS_RPN_H_
#define IRFSOD_SS_RPN_H_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "irfsod/features.h"
#include "irfsod/geometry.h"
#include "irfsod/nn.h"
#include "irfsod/rng.h"

namespace irfsod {

enum class AnchorLabel : uint8_t { kNegative, kPositive, kPseudoPositive, kIgnore };

const char* to_string(AnchorLabel label);

struct AnchorBatch {
  std::vector<Box> anchors;
  std::vector<AnchorLabel> labels;
  std::vector<std::optional<Box>> matched_gt;
  std::vector<double> objectness;
  std::vector<BoxDelta> deltas;

  size_t size() const { return anchors.size(); }
  size_t count(AnchorLabel label) const;
};

struct SampleCaps {
  int positive = 128;
  int negative = 128;
  int pseudo_positive = 128;
};

struct SsRpnConfig {
  double tau = 0.25;
  double neg_iou = 0.3;
  double pos_iou = 0.7;
  SampleCaps caps;
  // Anchor side lengths (pixels) and height/width ratios.
  std::vector<double> scales{32.0, 64.0, 128.0};
  std::vector<double> ratios{0.5, 1.0, 2.0};
  int hidden_channels = 64;
  int pre_nms_top_n = 600;
  int post_nms_top_n = 100;
  double nms_threshold = 0.7;
  double min_box_size = 1.0;
  // Off: plain RPN labeling (no pseudo positives).
  bool pseudo_labels = true;

  int anchors_per_cell() const {
    return static_cast<int>(scales.size() * ratios.size());
  }
  void validate() const;
};

// One anchor per (cell, scale, ratio) in that nesting order, centred at
// ((x + 0.5) * stride, (y + 0.5) * stride). A ratio r anchor of scale s has
// width s / sqrt(r) and height s * sqrt(r).
std::vector<Box> generate_anchors(int map_height, int map_width, int stride,
                                  std::span<const double> scales,
                                  std::span<const double> ratios);

// IoU labeling: max IoU < neg_iou -> negative, > pos_iou -> positive,
// otherwise ignore. The best anchor(s) of every GT are forced positive.
// Resets `labels` and `matched_gt` to the anchor count.
void label_anchors(AnchorBatch& batch, std::span<const Box> gt_boxes,
                   double neg_iou, double pos_iou);

// Negative anchors with objectness strictly above tau become pseudo
// positives. Returns the number relabeled.
size_t assign_pseudo_labels(AnchorBatch& batch, double tau);

// Uniform sampling without replacement, at most cap per label. Positive and
// pseudo-positive deficits are refilled with extra negatives. Indices are
// returned grouped positive, pseudo-positive, negative. Throws DataError if
// no anchor carries a trainable label.
std::vector<size_t> sample_batch(const AnchorBatch& batch, const SampleCaps& caps,
                                 Rng& rng);

struct RpnOutput {
  std::vector<double> logits;
  std::vector<double> objectness;
  std::vector<BoxDelta> deltas;
};

struct RpnCache {
  nn::ConvCache hidden_conv;
  nn::ConvCache cls_conv;
  nn::ConvCache reg_conv;
  Tensor hidden;
  int map_height = 0;
  int map_width = 0;
};

// Initial objectness of an untrained head.
inline constexpr double kObjectnessPrior = 0.01;

// 3x3 conv + ReLU, then sibling 1x1 convs for objectness logits (A per
// cell) and deltas (4A per cell). Outputs follow generate_anchors order.
class RpnHead {
 public:
  RpnHead() = default;
  RpnHead(int in_channels, int hidden_channels, int anchors_per_cell);

  void init(Rng& rng);
  ParamRefs parameters();
  int anchors_per_cell() const { return anchors_per_cell_; }

  RpnOutput forward(const FeatureMap& fm, RpnCache* cache) const;
  // Returns dL/d(feature map).
  Tensor backward(const RpnCache& cache, std::span<const double> grad_logits,
                  std::span<const BoxDelta> grad_deltas);

 private:
  int anchors_per_cell_ = 0;
  nn::Conv2d hidden_;
  nn::Conv2d cls_;
  nn::Conv2d reg_;
};

struct RpnLoss {
  double cls = 0.0;
  double reg = 0.0;
  std::vector<double> grad_logits;
  std::vector<BoxDelta> grad_deltas;
};

// Binary cross-entropy over sampled anchors ({positive, pseudo} vs negative)
// averaged over the sample; smooth-L1 on deltas of sampled true positives
// (summed over coordinates) averaged over their count. Pseudo positives have
// no regression target.
RpnLoss rpn_loss(const AnchorBatch& batch, std::span<const size_t> sampled,
                 std::span<const double> logits);

struct Proposal {
  Box box;
  double score = 0.0;
};

// Top pre_nms_top_n by objectness (ties by anchor index), decode, clip,
// drop boxes below min_box_size, NMS, keep post_nms_top_n.
std::vector<Proposal> propose(std::span<const double> objectness,
                              std::span<const BoxDelta> deltas,
                              std::span<const Box> anchors, const SsRpnConfig& cfg,
                              double image_width, double image_height);

}  // namespace irfsod

#endif  // IRFSOD_SS_RPN_H_
