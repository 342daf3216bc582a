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
#ifndef IRFSOD_FEATURES_H_
#define IRFSOD_FEATURES_H_

#include <span>
#include <vector>

#include "irfsod/geometry.h"
#include "irfsod/image.h"
#include "irfsod/nn.h"
#include "irfsod/tensor.h"

namespace irfsod {

// Convolutional stack: one 3x3 (by default) conv per stage, ReLU between
// stages. The last stage is linear unless final_relu is set, so that region
// embeddings can take either sign under cosine comparison.
struct BackboneConfig {
  std::vector<int> channels{16, 32, 64, 64};
  std::vector<int> strides{2, 2, 2, 1};
  int kernel = 3;
  bool final_relu = false;
  int input_channels = 3;

  int total_stride() const;
  int out_channels() const { return channels.empty() ? 0 : channels.back(); }
  void validate() const;
};

struct FeatureMap {
  Tensor values;  // (channels, height, width)
  int stride = 1;

  int channels() const { return values.dim(0); }
  int height() const { return values.dim(1); }
  int width() const { return values.dim(2); }
};

struct BackboneCache {
  std::vector<nn::ConvCache> convs;
  std::vector<Tensor> activations;  // post-activation output of each stage
};

class Backbone {
 public:
  Backbone() = default;
  explicit Backbone(const BackboneConfig& config);

  const BackboneConfig& config() const { return config_; }
  void init(Rng& rng);
  ParamRefs parameters();

  // `input` is (input_channels, H, W). Spatial output is ceil(H / stride).
  FeatureMap forward(const Tensor& input, BackboneCache* cache) const;
  FeatureMap forward(const Image& image, BackboneCache* cache = nullptr) const;
  // Accumulates parameter gradients given dL/d(feature map).
  void backward(const BackboneCache& cache, const Tensor& grad_features);

 private:
  BackboneConfig config_;
  std::vector<nn::Conv2d> stages_;
};

// (3, H, W) tensor with pixels mapped to [-0.5, 0.5].
Tensor image_to_tensor(const Image& image);

// Throws UsageError on empty images or images smaller than the stride.
FeatureMap extract_features(const Image& image, const Backbone& backbone);

// Pooled d x r x r region map with its derived vectors.
//   v: per-channel mean over the r*r cells.
//   f: `pooled` flattened channel-major, then row-major over (y, x), i.e.
//      f[(c * r + y) * r + x] = pooled(c, y, x).
struct RegionFeature {
  Tensor pooled;
  std::vector<double> v;
  std::vector<double> f;

  int depth() const { return pooled.dim(0); }
  int resolution() const { return pooled.dim(1); }

  static RegionFeature from_pooled(Tensor pooled);
};

// Category prototype: element-wise mean of `shots` instance region maps.
struct SupportFeature {
  int category = 0;
  RegionFeature proto;
  int shots = 0;
};

// Align-style bilinear pooling with one sample at each output cell center.
// Feature cell k spans map coordinates [k, k+1) and its value sits at
// k + 0.5; samples outside the map clamp to the border cells.
RegionFeature roi_extract(const FeatureMap& fm, const Box& box, int resolution);

// Scatters dL/d(pooled) back onto a (channels, height, width) gradient map.
void roi_extract_backward(const FeatureMap& fm, const Box& box, int resolution,
                          const Tensor& grad_pooled, Tensor& grad_features);

// Throws UsageError on an empty list or mismatched shapes.
SupportFeature support_prototype(std::span<const RegionFeature> instances,
                                 int category);

}  // namespace irfsod

#endif  // IRFSOD_FEATURES_H_
