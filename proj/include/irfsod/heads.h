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
// Second-stage heads. Every head scores a region against a category
// prototype of the same shape:
//   - distance score: parameter-free, mixes the cosine of the flattened maps
//     (pixel-wise contrast) with the cosine of the pooled vectors;
//   - comparison head: small learned network over per-pixel concatenation;
//   - multi-class head: softmax over the base categories plus background;
//   - box regressors: semi-explicit (cosine correspondence matrix + region
//     context) and plain (region features only).
#ifndef IRFSOD_HEADS_H_
#define IRFSOD_HEADS_H_

#include <span>
#include <vector>

#include "irfsod/features.h"
#include "irfsod/geometry.h"
#include "irfsod/nn.h"

namespace irfsod {

struct HeadConfig {
  double alpha = 0.5;
  double lambda = 20.0;
  double score_threshold = 0.5;
  double roi_pos_iou = 0.5;
  int roi_resolution = 7;
  int comparison_hidden = 64;
  int regressor_hidden = 128;
  double detection_nms = 0.5;
  int max_detections = 100;
  // RoIs sampled per query image during training and their foreground share.
  int roi_samples = 64;
  double roi_fg_fraction = 0.25;

  void validate() const;
};

// x^T y / (|x| |y|), clamped to [-1, 1]. A zero-norm argument gives 0.
double cosine(std::span<const double> a, std::span<const double> b);

// 1 / (1 + exp(-lambda * x)).
double sharp_sigmoid(double x, double lambda);

// Mixed cosine (1 - alpha) * D(f_x, f_c) + alpha * D(v_x, v_c), before the
// sharp sigmoid.
double distance_similarity(const RegionFeature& x, const SupportFeature& c, double alpha);

// Probability that region x shows category c under the distance classifier.
double distance_score(const RegionFeature& x, const SupportFeature& c, const HeadConfig& cfg);

// Gradient of the similarity w.r.t. the pooled maps, scaled by `grad`.
// Accumulates into grad_x / grad_c when non-null.
void distance_similarity_backward(const RegionFeature& x, const SupportFeature& c,
                                  double alpha, double grad, Tensor* grad_x,
                                  Tensor* grad_c);

// r^2 x r^2 cosine correspondence between region cells (rows) and prototype
// cells (columns); cell index is y * r + x. `flat` is `values` row-major.
struct DistanceMatrix {
  int cells = 0;
  std::vector<double> values;

  double at(int i, int j) const { return values[static_cast<size_t>(i) * cells + j]; }
  std::span<const double> flat() const { return values; }
};

DistanceMatrix distance_matrix(const RegionFeature& x, const SupportFeature& c);
DistanceMatrix distance_matrix(const RegionFeature& x, const RegionFeature& c);

// Accumulates d(sum_ij grad_m[i,j] * M[i,j]) into grad_x / grad_c.
void distance_matrix_backward(const RegionFeature& x, const RegionFeature& c,
                              std::span<const double> grad_m, Tensor* grad_x,
                              Tensor* grad_c);

struct ComparisonCache {
  nn::Mat hidden;  // (hidden, r*r) post-ReLU
};

// Per-pixel [F_x; F_c] -> 1x1 conv -> ReLU -> global average pool -> FC ->
// one logit.
class ComparisonHead {
 public:
  ComparisonHead() = default;
  ComparisonHead(int depth, int hidden);

  void init(Rng& rng);
  ParamRefs parameters();
  int depth() const { return depth_; }

  double logit(const RegionFeature& x, const SupportFeature& c, ComparisonCache* cache) const;
  double score(const RegionFeature& x, const SupportFeature& c) const;
  // Accumulates parameter gradients and, when non-null, input gradients.
  void backward(const RegionFeature& x, const SupportFeature& c, const ComparisonCache& cache,
                double grad_logit, Tensor* grad_x, Tensor* grad_c);

  nn::Linear& conv() { return conv_; }
  nn::Linear& fc() { return fc_; }

 private:
  int depth_ = 0;
  int hidden_ = 0;
  nn::Linear conv_;  // (hidden, 2 * depth) acting on each cell
  nn::Linear fc_;    // (1, hidden)
};

// Linear classifier over f_x producing logits for background (index 0) and
// each base category (index i + 1 for categories[i]).
class MultiClassHead {
 public:
  MultiClassHead() = default;
  MultiClassHead(int input_size, std::vector<int> categories);

  void init(Rng& rng);
  ParamRefs parameters();
  const std::vector<int>& categories() const { return categories_; }
  int input_size() const { return fc_.in_features(); }

  std::vector<double> logits(const RegionFeature& x) const;
  std::vector<double> probabilities(const RegionFeature& x) const;
  void backward(const RegionFeature& x, std::span<const double> grad_logits, Tensor* grad_x);

  nn::Linear& fc() { return fc_; }

 private:
  std::vector<int> categories_;
  nn::Linear fc_;
};

std::vector<double> softmax(std::span<const double> logits);

enum class RegressorKind { kSemiExplicit, kPlain };

struct RegressorCache {
  nn::Mat input;   // (1, in)
  nn::Mat hidden;  // (1, hidden) post-ReLU
};

// Two fully-connected layers producing (dx, dy, dw, dh). The semi-explicit
// input is [d_M ; v_x] (length r^4 + d); the plain input is f_x.
class BoxRegressor {
 public:
  BoxRegressor() = default;
  BoxRegressor(RegressorKind kind, int depth, int resolution, int hidden);

  void init(Rng& rng);
  ParamRefs parameters();
  RegressorKind kind() const { return kind_; }
  int input_size() const { return fc1_.in_features(); }

  BoxDelta forward(const RegionFeature& x, const SupportFeature& c, RegressorCache* cache) const;
  void backward(const RegionFeature& x, const SupportFeature& c, const RegressorCache& cache,
                const BoxDelta& grad, Tensor* grad_x, Tensor* grad_c);

  nn::Linear& fc1() { return fc1_; }
  nn::Linear& fc2() { return fc2_; }

 private:
  nn::Mat build_input(const RegionFeature& x, const SupportFeature& c) const;

  RegressorKind kind_ = RegressorKind::kSemiExplicit;
  int depth_ = 0;
  int resolution_ = 0;
  nn::Linear fc1_;
  nn::Linear fc2_;
};

// Convenience entry point with the semi-explicit architecture.
BoxDelta semi_explicit_regress(const RegionFeature& x, const SupportFeature& c,
                               const BoxRegressor& params);

double comparison_score(const RegionFeature& x, const SupportFeature& c,
                        const ComparisonHead& params);

std::vector<double> multi_class_score(const RegionFeature& x, const MultiClassHead& params);

enum class ClassifierMode { kTrain, kInfer };

// Train mode scores with the comparison head; infer mode with the
// parameter-free distance score, so switching needs no retraining.
double classify_dynamic(const RegionFeature& x, const SupportFeature& c, ClassifierMode mode,
                        const HeadConfig& cfg, const ComparisonHead& params);

}  // namespace irfsod

#endif  // IRFSOD_HEADS_H_
