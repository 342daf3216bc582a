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
#include "irfsod/features.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "irfsod/errors.h"

namespace irfsod {

int BackboneConfig::total_stride() const {
  int s = 1;
  for (int v : strides) s *= v;
  return s;
}

void BackboneConfig::validate() const {
  if (channels.empty() || channels.size() != strides.size()) {
    throw UsageError("backbone: channels and strides must be non-empty and of equal length");
  }
  for (int c : channels) {
    if (c <= 0) throw UsageError("backbone: channel counts must be positive");
  }
  for (int s : strides) {
    if (s < 1) throw UsageError("backbone: strides must be >= 1");
  }
  if (kernel < 1 || kernel % 2 == 0) throw UsageError("backbone: kernel must be odd and positive");
  if (input_channels < 1) throw UsageError("backbone: input_channels must be positive");
}

Backbone::Backbone(const BackboneConfig& config) : config_(config) {
  config_.validate();
  int in = config_.input_channels;
  for (size_t i = 0; i < config_.channels.size(); ++i) {
    nn::ConvSpec spec{in, config_.channels[i], config_.kernel, config_.strides[i],
                      config_.kernel / 2};
    stages_.emplace_back("backbone.stage" + std::to_string(i), spec);
    in = config_.channels[i];
  }
}

void Backbone::init(Rng& rng) {
  for (auto& s : stages_) s.init(rng);
}

ParamRefs Backbone::parameters() {
  ParamRefs out;
  for (auto& s : stages_) {
    out.emplace_back(s.weight());
    out.emplace_back(s.bias());
  }
  return out;
}

FeatureMap Backbone::forward(const Tensor& input, BackboneCache* cache) const {
  if (input.rank() != 3 || input.size() == 0) {
    throw UsageError("backbone: empty input");
  }
  if (input.dim(1) < config_.total_stride() || input.dim(2) < config_.total_stride()) {
    throw UsageError("backbone: image smaller than the feature stride");
  }
  if (cache) {
    cache->convs.assign(stages_.size(), {});
    cache->activations.clear();
  }
  Tensor x = input;
  for (size_t i = 0; i < stages_.size(); ++i) {
    x = stages_[i].forward(x, cache ? &cache->convs[i] : nullptr);
    const bool last = i + 1 == stages_.size();
    if (!last || config_.final_relu) nn::relu_inplace(x);
    if (cache) cache->activations.push_back(x);
  }
  return {std::move(x), config_.total_stride()};
}

FeatureMap Backbone::forward(const Image& image, BackboneCache* cache) const {
  return forward(image_to_tensor(image), cache);
}

void Backbone::backward(const BackboneCache& cache, const Tensor& grad_features) {
  Tensor grad = grad_features;
  for (size_t i = stages_.size(); i-- > 0;) {
    const bool last = i + 1 == stages_.size();
    if (!last || config_.final_relu) nn::relu_backward_inplace(cache.activations[i], grad);
    // The input gradient of the first stage is not needed.
    if (i == 0) {
      Tensor unused = stages_[i].backward(cache.convs[i], grad);
      (void)unused;
    } else {
      grad = stages_[i].backward(cache.convs[i], grad);
    }
  }
}

Tensor image_to_tensor(const Image& image) {
  if (image.empty()) throw UsageError("image is empty");
  Tensor t({Image::kChannels, image.height, image.width});
  for (int c = 0; c < Image::kChannels; ++c) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        t.at(c, y, x) = image.at(x, y, c) / 255.0 - 0.5;
      }
    }
  }
  return t;
}

FeatureMap extract_features(const Image& image, const Backbone& backbone) {
  return backbone.forward(image, nullptr);
}

RegionFeature RegionFeature::from_pooled(Tensor pooled) {
  RegionFeature rf;
  const int d = pooled.dim(0);
  const int r = pooled.dim(1);
  const int cells = r * pooled.dim(2);
  rf.v.assign(d, 0.0);
  for (int c = 0; c < d; ++c) {
    double s = 0.0;
    for (int i = 0; i < cells; ++i) s += pooled[static_cast<size_t>(c) * cells + i];
    rf.v[c] = s / cells;
  }
  rf.f.assign(pooled.values().begin(), pooled.values().end());
  rf.pooled = std::move(pooled);
  return rf;
}

namespace {

// Bilinear neighbours and weights of a sample at continuous index
// coordinate (iy, ix), clamped to the map.
struct Bilinear {
  int y0, y1, x0, x1;
  double wy0, wy1, wx0, wx1;
};

Bilinear bilinear_at(double iy, double ix, int h, int w) {
  iy = std::clamp(iy, 0.0, static_cast<double>(h - 1));
  ix = std::clamp(ix, 0.0, static_cast<double>(w - 1));
  Bilinear b;
  b.y0 = static_cast<int>(std::floor(iy));
  b.x0 = static_cast<int>(std::floor(ix));
  b.y1 = std::min(b.y0 + 1, h - 1);
  b.x1 = std::min(b.x0 + 1, w - 1);
  b.wy1 = iy - b.y0;
  b.wy0 = 1.0 - b.wy1;
  b.wx1 = ix - b.x0;
  b.wx0 = 1.0 - b.wx1;
  return b;
}

std::vector<Bilinear> sample_grid(const FeatureMap& fm, const Box& box, int r) {
  if (r < 1) throw UsageError("roi_extract: resolution must be >= 1");
  if (!std::isfinite(box.x1) || !std::isfinite(box.y1) || !std::isfinite(box.x2) ||
      !std::isfinite(box.y2)) {
    throw UsageError("roi_extract: non-finite box");
  }
  const double s = fm.stride;
  const double bw = std::max(box.width(), 0.0) / s;
  const double bh = std::max(box.height(), 0.0) / s;
  std::vector<Bilinear> grid;
  grid.reserve(static_cast<size_t>(r) * r);
  for (int oy = 0; oy < r; ++oy) {
    const double u_y = box.y1 / s + (oy + 0.5) * bh / r;
    for (int ox = 0; ox < r; ++ox) {
      const double u_x = box.x1 / s + (ox + 0.5) * bw / r;
      grid.push_back(bilinear_at(u_y - 0.5, u_x - 0.5, fm.height(), fm.width()));
    }
  }
  return grid;
}

}  // namespace

RegionFeature roi_extract(const FeatureMap& fm, const Box& box, int resolution) {
  const auto grid = sample_grid(fm, box, resolution);
  const int d = fm.channels();
  const int r = resolution;
  Tensor pooled({d, r, r});
  for (int c = 0; c < d; ++c) {
    for (int i = 0; i < r * r; ++i) {
      const Bilinear& b = grid[i];
      pooled[static_cast<size_t>(c) * r * r + i] =
          b.wy0 * (b.wx0 * fm.values.at(c, b.y0, b.x0) + b.wx1 * fm.values.at(c, b.y0, b.x1)) +
          b.wy1 * (b.wx0 * fm.values.at(c, b.y1, b.x0) + b.wx1 * fm.values.at(c, b.y1, b.x1));
    }
  }
  return RegionFeature::from_pooled(std::move(pooled));
}

void roi_extract_backward(const FeatureMap& fm, const Box& box, int resolution,
                          const Tensor& grad_pooled, Tensor& grad_features) {
  const auto grid = sample_grid(fm, box, resolution);
  const int d = fm.channels();
  const int r = resolution;
  for (int c = 0; c < d; ++c) {
    for (int i = 0; i < r * r; ++i) {
      const double g = grad_pooled[static_cast<size_t>(c) * r * r + i];
      if (g == 0.0) continue;
      const Bilinear& b = grid[i];
      grad_features.at(c, b.y0, b.x0) += g * b.wy0 * b.wx0;
      grad_features.at(c, b.y0, b.x1) += g * b.wy0 * b.wx1;
      grad_features.at(c, b.y1, b.x0) += g * b.wy1 * b.wx0;
      grad_features.at(c, b.y1, b.x1) += g * b.wy1 * b.wx1;
    }
  }
}

SupportFeature support_prototype(std::span<const RegionFeature> instances, int category) {
  if (instances.empty()) throw UsageError("support_prototype: no instances");
  const auto& shape = instances.front().pooled.shape();
  Tensor sum(shape);
  for (const auto& inst : instances) {
    if (inst.pooled.shape() != shape) {
      throw UsageError("support_prototype: instance shapes differ");
    }
    for (size_t i = 0; i < sum.size(); ++i) sum[i] += inst.pooled[i];
  }
  const double k = static_cast<double>(instances.size());
  for (double& x : sum.values()) x /= k;
  return {category, RegionFeature::from_pooled(std::move(sum)),
          static_cast<int>(instances.size())};
}

}  // namespace irfsod
