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
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "irfsod/errors.h"
#include "irfsod/features.h"
#include "test_util.h"

namespace irfsod {
namespace {

FeatureMap make_map(Tensor values, int stride) {
  FeatureMap fm;
  fm.values = std::move(values);
  fm.stride = stride;
  return fm;
}

// Scalar bilinear sample at continuous index coordinates (clamped).
double bilinear(const Tensor& t, int c, double y, double x) {
  const int h = t.dim(1), w = t.dim(2);
  y = std::clamp(y, 0.0, h - 1.0);
  x = std::clamp(x, 0.0, w - 1.0);
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - y0, fx = x - x0;
  return (1 - fy) * ((1 - fx) * t.at(c, y0, x0) + fx * t.at(c, y0, x1)) +
         fy * ((1 - fx) * t.at(c, y1, x0) + fx * t.at(c, y1, x1));
}

TEST(Backbone, OutputShapeIsCeilOfInputOverStride) {
  BackboneConfig cfg;
  Backbone net(cfg);
  Rng rng(0);
  net.init(rng);
  EXPECT_EQ(cfg.total_stride(), 8);
  const FeatureMap fm = net.forward(Image(64, 64, 90));
  EXPECT_EQ(fm.stride, 8);
  EXPECT_EQ(fm.channels(), 64);
  EXPECT_EQ(fm.height(), 8);
  EXPECT_EQ(fm.width(), 8);
  const FeatureMap odd = net.forward(Image(65, 50, 90));
  EXPECT_EQ(odd.width(), 9);
  EXPECT_EQ(odd.height(), 7);
}

TEST(Backbone, Deterministic) {
  Backbone net(BackboneConfig{});
  Rng rng(5);
  net.init(rng);
  Image img(40, 40);
  Rng px(9);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(px.index(256));
  EXPECT_EQ(net.forward(img).values, net.forward(img).values);
}

TEST(Backbone, RejectsEmptyAndTinyImages) {
  Backbone net(BackboneConfig{});
  EXPECT_THROW(net.forward(Image()), UsageError);
  EXPECT_THROW(net.forward(Image(4, 4)), UsageError);
}

TEST(Backbone, ZeroInputDependsOnlyOnBiases) {
  // Two stride-1 stages: 1 -> 2 -> 1 channels, final stage linear.
  BackboneConfig cfg;
  cfg.channels = {2, 1};
  cfg.strides = {1, 1};
  cfg.input_channels = 1;
  Backbone net(cfg);
  Rng rng(2);
  net.init(rng);
  auto params = net.parameters();
  // params: stage0.weight (2,1,3,3), stage0.bias (2), stage1.weight (1,2,3,3), stage1.bias (1)
  Tensor& b0 = params[1].get().value;
  b0[0] = 0.7;
  b0[1] = -0.4;  // removed by the ReLU
  const Tensor& w1 = params[2].get().value;
  params[3].get().value[0] = 0.25;
  const int h = 5, w = 4;
  const FeatureMap fm = net.forward(Tensor({1, h, w}), nullptr);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double expect = 0.25;
      for (int c = 0; c < 2; ++c) {
        const double act = std::max(b0[c], 0.0);
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const int yy = y + ky - 1, xx = x + kx - 1;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;  // zero padding
            expect += w1[((0 * 2 + c) * 3 + ky) * 3 + kx] * act;
          }
        }
      }
      EXPECT_NEAR(fm.values.at(0, y, x), expect, 1e-12);
    }
  }
}

TEST(Backbone, GradientMatchesFiniteDifferences) {
  BackboneConfig cfg;
  cfg.channels = {3, 4};
  cfg.strides = {2, 1};
  Backbone net(cfg);
  Rng rng(4);
  net.init(rng);
  const Tensor input = testing::random_tensor({3, 9, 7}, rng);
  const FeatureMap probe = net.forward(input, nullptr);
  const Tensor weights = testing::random_tensor(probe.values.shape(), rng);
  auto loss = [&] {
    const FeatureMap fm = net.forward(input, nullptr);
    double s = 0.0;
    for (size_t i = 0; i < fm.values.size(); ++i) s += weights[i] * fm.values[i];
    return s;
  };
  auto params = net.parameters();
  for (Param& p : params) p.zero_grad();
  BackboneCache cache;
  net.forward(input, &cache);
  net.backward(cache, weights);
  for (Param& p : params) {
    const auto at = testing::probe_indices(p.value.size(), 40, rng);
    const auto numeric = testing::numeric_grad(p.value.values(), at, loss);
    std::vector<double> analytic;
    for (size_t i : at) analytic.push_back(p.grad[i]);
    EXPECT_LT(testing::relative_error(analytic, numeric), 1e-6) << p.name;
  }
}

TEST(RoiExtract, SingleCellBoxReplicatesThatCell) {
  Rng rng(1);
  const FeatureMap fm = make_map(testing::random_tensor({5, 6, 6}, rng), 8);
  // Box exactly covering cell (y=2, x=3).
  const Box cell{24, 16, 32, 24};
  const RegionFeature one = roi_extract(fm, cell, 1);
  for (int c = 0; c < 5; ++c) EXPECT_DOUBLE_EQ(one.pooled.at(c, 0, 0), fm.values.at(c, 2, 3));

  // With a constant neighbourhood every one of the r x r samples equals it.
  Tensor flat = fm.values;
  for (int c = 0; c < 5; ++c) {
    for (int y = 0; y < 6; ++y) {
      for (int x = 0; x < 6; ++x) flat.at(c, y, x) = fm.values.at(c, 2, 3);
    }
  }
  const RegionFeature rep = roi_extract(make_map(flat, 8), cell, 4);
  for (int c = 0; c < 5; ++c) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) EXPECT_DOUBLE_EQ(rep.pooled.at(c, y, x), fm.values.at(c, 2, 3));
    }
  }
}

TEST(RoiExtract, Deterministic) {
  Rng rng(2);
  const FeatureMap fm = make_map(testing::random_tensor({3, 8, 8}, rng), 8);
  const Box b{5.5, 7.25, 40.0, 51.0};
  EXPECT_EQ(roi_extract(fm, b, 4).pooled, roi_extract(fm, b, 4).pooled);
}

TEST(RoiExtract, LinearRampMatchesScalarBilinearOracle) {
  const int d = 2, h = 8, w = 8, stride = 8, r = 4;
  Tensor ramp({d, h, w});
  for (int c = 0; c < d; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) ramp.at(c, y, x) = (c + 1) * (0.5 * x + 2.0 * y) - c;
    }
  }
  const FeatureMap fm = make_map(ramp, stride);
  const Box b{20, 12, 44, 40};
  const RegionFeature rf = roi_extract(fm, b, r);
  for (int c = 0; c < d; ++c) {
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < r; ++j) {
        const double py = b.y1 + (i + 0.5) * b.height() / r;
        const double px = b.x1 + (j + 0.5) * b.width() / r;
        const double u_y = py / stride - 0.5, u_x = px / stride - 0.5;
        EXPECT_NEAR(rf.pooled.at(c, i, j), bilinear(ramp, c, u_y, u_x), 1e-12);
        // Interior samples of a linear ramp are exact.
        EXPECT_NEAR(rf.pooled.at(c, i, j), (c + 1) * (0.5 * u_x + 2.0 * u_y) - c, 1e-12);
      }
    }
  }
}

TEST(RoiExtract, FullImageBoxAtMapResolutionReproducesMap) {
  Rng rng(3);
  const FeatureMap fm = make_map(testing::random_tensor({4, 6, 6}, rng), 8);
  const RegionFeature rf = roi_extract(fm, {0, 0, 48, 48}, 6);
  for (size_t i = 0; i < fm.values.size(); ++i) EXPECT_NEAR(rf.pooled[i], fm.values[i], 1e-12);
}

TEST(RoiExtract, VectorsAreConsistent) {
  Rng rng(4);
  const FeatureMap fm = make_map(testing::random_tensor({6, 8, 8}, rng), 8);
  for (int t = 0; t < 50; ++t) {
    const Box b = testing::random_box(rng, 60.0, 0.01);
    const RegionFeature rf = roi_extract(fm, b, 3);
    ASSERT_EQ(rf.v.size(), 6u);
    ASSERT_EQ(rf.f.size(), 6u * 9u);
    for (int c = 0; c < 6; ++c) {
      double mean = 0.0;
      for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 3; ++x) {
          mean += rf.pooled.at(c, y, x) / 9.0;
          // Channel-major then row-major flattening.
          EXPECT_EQ(rf.f[(c * 3 + y) * 3 + x], rf.pooled.at(c, y, x));
        }
      }
      EXPECT_NEAR(rf.v[c], mean, 1e-6);
      EXPECT_TRUE(std::isfinite(rf.v[c]));
    }
  }
}

TEST(RoiExtract, BackwardIsTheAdjoint) {
  Rng rng(5);
  FeatureMap fm = make_map(testing::random_tensor({3, 5, 7}, rng), 4);
  const Box b{1.5, 2.0, 21.0, 13.5};
  const Tensor g = testing::random_tensor({3, 3, 3}, rng);
  Tensor grad(fm.values.shape());
  roi_extract_backward(fm, b, 3, g, grad);
  auto loss = [&] {
    const RegionFeature rf = roi_extract(fm, b, 3);
    double s = 0.0;
    for (size_t i = 0; i < g.size(); ++i) s += g[i] * rf.pooled[i];
    return s;
  };
  std::vector<size_t> all(fm.values.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto numeric = testing::numeric_grad(fm.values.values(), all, loss);
  EXPECT_LT(testing::relative_error(grad.storage(), numeric), 1e-8);
}

TEST(RoiExtract, RejectsBadArguments) {
  const FeatureMap fm = make_map(Tensor({1, 2, 2}), 8);
  EXPECT_THROW(roi_extract(fm, {0, 0, 8, 8}, 0), UsageError);
  EXPECT_THROW(roi_extract(fm, {0, 0, NAN, 8}, 2), UsageError);
}

TEST(SupportPrototype, SingleInstanceIsIdentity) {
  Rng rng(6);
  const RegionFeature f = testing::random_region(4, 3, rng);
  const RegionFeature inst[] = {f};
  const SupportFeature s = support_prototype(inst, 7);
  EXPECT_EQ(s.category, 7);
  EXPECT_EQ(s.shots, 1);
  EXPECT_EQ(s.proto.pooled, f.pooled);
}

TEST(SupportPrototype, OppositeInstancesCancel) {
  Rng rng(7);
  const RegionFeature f = testing::random_region(4, 3, rng);
  Tensor neg = f.pooled;
  for (double& v : neg.values()) v = -v;
  const RegionFeature inst[] = {f, RegionFeature::from_pooled(neg)};
  const SupportFeature s = support_prototype(inst, 1);
  for (double v : s.proto.pooled.values()) EXPECT_EQ(v, 0.0);
  for (double v : s.proto.v) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(SupportPrototype, MatchesLoopOracleAndIsPermutationInvariant) {
  Rng rng(8);
  std::vector<RegionFeature> inst;
  for (int k = 0; k < 10; ++k) inst.push_back(testing::random_region(5, 4, rng));
  const SupportFeature s = support_prototype(inst, 3);
  EXPECT_EQ(s.shots, 10);
  for (size_t i = 0; i < s.proto.pooled.size(); ++i) {
    double sum = 0.0;
    for (const auto& f : inst) sum += f.pooled[i];
    EXPECT_NEAR(s.proto.pooled[i], sum / 10.0, 1e-7);
  }
  std::vector<RegionFeature> shuffled = inst;
  rng.shuffle(shuffled);
  const SupportFeature t = support_prototype(shuffled, 3);
  for (size_t i = 0; i < s.proto.pooled.size(); ++i) {
    EXPECT_NEAR(s.proto.pooled[i], t.proto.pooled[i], 1e-14);
  }
}

TEST(SupportPrototype, RejectsEmptyAndMixedShapes) {
  EXPECT_THROW(support_prototype({}, 1), UsageError);
  Rng rng(9);
  const RegionFeature inst[] = {testing::random_region(2, 2, rng), testing::random_region(2, 3, rng)};
  EXPECT_THROW(support_prototype(inst, 1), UsageError);
}

}  // namespace
}  // namespace irfsod
