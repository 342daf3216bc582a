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
#include "irfsod/model.h"

#include <cstring>

namespace irfsod {

Detector::Detector(const RunConfig& config)
    : backbone(config.backbone),
      rpn(config.backbone.out_channels(), config.rpn.hidden_channels,
          config.rpn.anchors_per_cell()),
      comparison(config.backbone.out_channels(), config.heads.comparison_hidden),
      multi(config.backbone.out_channels() * config.heads.roi_resolution *
                config.heads.roi_resolution,
            config.data.base_categories),
      regressor(config.ablation.regressor, config.backbone.out_channels(),
                config.heads.roi_resolution, config.heads.regressor_hidden),
      config_(config) {
  config_.validate();
}

void Detector::init(uint64_t seed) {
  Rng rng(seed);
  backbone.init(rng);
  rpn.init(rng);
  comparison.init(rng);
  multi.init(rng);
  regressor.init(rng);
}

ParamRefs Detector::parameters() {
  ParamRefs out;
  auto append = [&](ParamRefs refs) { out.insert(out.end(), refs.begin(), refs.end()); };
  append(backbone.parameters());
  append(rpn.parameters());
  append(comparison.parameters());
  append(multi.parameters());
  append(regressor.parameters());
  return out;
}

std::vector<const Param*> Detector::parameters() const {
  std::vector<const Param*> out;
  for (Param& p : const_cast<Detector*>(this)->parameters()) out.push_back(&p);
  return out;
}

void Detector::zero_grad() {
  for (Param& p : parameters()) p.zero_grad();
}

uint64_t Detector::parameter_hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* data, size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const Param* p : parameters()) {
    mix(p->name.data(), p->name.size());
    mix(p->value.data(), p->value.size() * sizeof(double));
  }
  return h;
}

std::vector<Box> Detector::anchors(const FeatureMap& fm) const {
  return generate_anchors(fm.height(), fm.width(), fm.stride, config_.rpn.scales,
                          config_.rpn.ratios);
}

}  // namespace irfsod
