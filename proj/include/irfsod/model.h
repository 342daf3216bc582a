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
#ifndef IRFSOD_MODEL_H_
#define IRFSOD_MODEL_H_

#include <cstdint>
#include <vector>

#include "irfsod/config.h"
#include "irfsod/features.h"
#include "irfsod/heads.h"
#include "irfsod/ss_rpn.h"

namespace irfsod {

// The two-stage detector: shared backbone, proposal network, and every
// second-stage head (only the ones selected by the ablation config are
// exercised, but all are built so one checkpoint layout serves every mode).
class Detector {
 public:
  explicit Detector(const RunConfig& config);

  // Deterministic parameter initialization.
  void init(uint64_t seed);

  const RunConfig& config() const { return config_; }
  RunConfig& mutable_config() { return config_; }

  ParamRefs parameters();
  std::vector<const Param*> parameters() const;
  void zero_grad();

  // FNV-1a over every parameter's name and value bytes.
  uint64_t parameter_hash() const;

  std::vector<Box> anchors(const FeatureMap& fm) const;

  Backbone backbone;
  RpnHead rpn;
  ComparisonHead comparison;
  MultiClassHead multi;
  BoxRegressor regressor;

 private:
  RunConfig config_;
};

}  // namespace irfsod

#endif  // IRFSOD_MODEL_H_
