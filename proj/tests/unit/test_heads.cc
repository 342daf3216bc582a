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

#include <cmath>
#include <numeric>

#include "irfsod/errors.h"
#include "irfsod/heads.h"
#include "oracles.h"
#include "test_util.h"

namespace irfsod {
namespace {

using testing::as_support;
using testing::loop_cosine;
using testing::random_region;

// Gradient check of `loss` w.r.t. the pooled map of a region; `rebuild`
// recomputes the derived vectors after each perturbation.
double input_grad_error(Tensor& pooled, const Tensor& analytic, const std::function<double()>& loss) {
  std::vector<size_t> all(pooled.size());
  std::iota(all.begin(), all.end(), size_t{0});
  const auto numeric = testing::numeric_grad(pooled.values(), all, loss);
  return testing::relative_error(analytic.storage(), numeric);
}

TEST(Cosine, Conventions) {
  const std::vector<double> a{1, 0}, z{0, 0};
  EXPECT_EQ(cosine(a, z), 0.0);
  EXPECT_DOUBLE_EQ(cosine(a, a), 1.0);
  EXPECT_DOUBLE_EQ(sharp_sigmoid(0.0, 20.0), 0.5);
}

TEST(DistanceScore, IdenticalMapsSaturate) {
  Rng rng(1);
  const RegionFeature x = random_region(8, 4, rng);
  HeadConfig cfg;
  EXPECT_NEAR(distance_score(x, as_support(x), cfg), 1.0 / (1.0 + std::exp(-20.0)), 1e-12);
}

TEST(DistanceScore, AlphaOneUsesPooledVectorsOnly) {
  Rng rng(2);
  const RegionFeature x = random_region(8, 4, rng), c = random_region(8, 4, rng);
  HeadConfig cfg;
  cfg.alpha = 1.0;
  EXPECT_NEAR(distance_score(x, as_support(c), cfg), sharp_sigmoid(cosine(x.v, c.v), 20.0), 1e-12);
}

TEST(DistanceScore, MatchesLoopOracle) {
  Rng rng(3);
  HeadConfig cfg;
  for (int t = 0; t < 100; ++t) {
    const RegionFeature x = random_region(8, 4, rng), c = random_region(8, 4, rng);
    EXPECT_NEAR(distance_score(x, as_support(c), cfg),
                testing::loop_distance_score(x, c, cfg.alpha, cfg.lambda), 1e-6);
  }
}

TEST(DistanceScore, ScaleInvariantAndRepresentationIsolated) {
  Rng rng(4);
  HeadConfig cfg;
  const RegionFeature x = random_region(6, 3, rng), c = random_region(6, 3, rng);
  Tensor scaled = x.pooled;
  for (double& v : scaled.values()) v *= 3.7;
  EXPECT_NEAR(distance_score(RegionFeature::from_pooled(scaled), as_support(c), cfg),
              distance_score(x, as_support(c), cfg), 1e-12);

  // Adding a zero-mean pattern per channel changes f but not v.
  Tensor shifted = x.pooled;
  for (int ch = 0; ch < 6; ++ch) {
    shifted.at(ch, 0, 0) += 1.0;
    shifted.at(ch, 2, 2) -= 1.0;
  }
  const RegionFeature xs = RegionFeature::from_pooled(shifted);
  cfg.alpha = 1.0;
  EXPECT_NEAR(distance_score(xs, as_support(c), cfg), distance_score(x, as_support(c), cfg), 1e-12);
  cfg.alpha = 0.0;
  EXPECT_NE(distance_score(xs, as_support(c), cfg), distance_score(x, as_support(c), cfg));
  // With alpha 0 the pooled vector is irrelevant: override v directly.
  RegionFeature xv = x;
  for (double& v : xv.v) v = rng.normal();
  EXPECT_EQ(distance_score(xv, as_support(c), cfg), distance_score(x, as_support(c), cfg));
}

TEST(DistanceScore, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  for (double alpha : {0.0, 0.5, 1.0}) {
    RegionFeature x = random_region(5, 3, rng), c = random_region(5, 3, rng);
    Tensor gx(x.pooled.shape()), gc(c.pooled.shape());
    distance_similarity_backward(x, as_support(c), alpha, 1.0, &gx, &gc);
    Tensor px = x.pooled, pc = c.pooled;
    auto loss = [&] {
      return distance_similarity(RegionFeature::from_pooled(px), as_support(RegionFeature::from_pooled(pc)),
                                 alpha);
    };
    EXPECT_LT(input_grad_error(px, gx, loss), 1e-6) << alpha;
    EXPECT_LT(input_grad_error(pc, gc, loss), 1e-6) << alpha;
  }
}

TEST(DistanceMatrix, DegenerateAndOrthogonalCases) {
  Rng rng(6);
  const RegionFeature a = random_region(5, 1, rng), b = random_region(5, 1, rng);
  const DistanceMatrix m = distance_matrix(a, as_support(b));
  ASSERT_EQ(m.cells, 1);
  EXPECT_NEAR(m.at(0, 0), cosine(a.f, b.f), 1e-12);

  Tensor basis({4, 2, 2}, 0.0);
  for (int k = 0; k < 4; ++k) basis.at(k, k / 2, k % 2) = 1.0 + k;
  const RegionFeature e = RegionFeature::from_pooled(basis);
  const DistanceMatrix id = distance_matrix(e, as_support(e));
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(id.at(i, j), i == j ? 1.0 : 0.0, 1e-12);
  }
}

TEST(DistanceMatrix, MatchesLoopOracleAndTransposes) {
  Rng rng(7);
  const RegionFeature x = random_region(6, 7, rng), c = random_region(6, 7, rng);
  const DistanceMatrix m = distance_matrix(x, as_support(c));
  EXPECT_EQ(m.flat().size(), 2401u);
  const DistanceMatrix mt = distance_matrix(c, x);
  for (int i = 0; i < 49; ++i) {
    for (int j = 0; j < 49; ++j) {
      std::vector<double> a, b;
      for (int ch = 0; ch < 6; ++ch) {
        a.push_back(x.pooled.at(ch, i / 7, i % 7));
        b.push_back(c.pooled.at(ch, j / 7, j % 7));
      }
      EXPECT_NEAR(m.at(i, j), loop_cosine(a, b), 1e-10);
      EXPECT_LE(std::abs(m.at(i, j)), 1.0);
      EXPECT_NEAR(m.at(i, j), mt.at(j, i), 1e-12);
    }
  }
}

TEST(DistanceMatrix, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  RegionFeature x = random_region(4, 3, rng), c = random_region(4, 3, rng);
  std::vector<double> w(81);
  for (double& v : w) v = rng.normal();
  Tensor gx(x.pooled.shape()), gc(c.pooled.shape());
  distance_matrix_backward(x, c, w, &gx, &gc);
  Tensor px = x.pooled, pc = c.pooled;
  auto loss = [&] {
    const DistanceMatrix m = distance_matrix(RegionFeature::from_pooled(px), RegionFeature::from_pooled(pc));
    return std::inner_product(w.begin(), w.end(), m.values.begin(), 0.0);
  };
  EXPECT_LT(input_grad_error(px, gx, loss), 1e-6);
  EXPECT_LT(input_grad_error(pc, gc, loss), 1e-6);
}

TEST(DistanceMatrix, ShapeMismatchThrows) {
  Rng rng(9);
  EXPECT_THROW(distance_matrix(random_region(4, 3, rng), as_support(random_region(4, 2, rng))),
               UsageError);
  EXPECT_THROW(distance_matrix(random_region(4, 3, rng), as_support(random_region(5, 3, rng))),
               UsageError);
}

TEST(ComparisonHead, ZeroFinalLayerGivesOneHalf) {
  Rng rng(10);
  ComparisonHead head(6, 8);
  head.init(rng);
  head.fc().zero();
  EXPECT_EQ(comparison_score(random_region(6, 3, rng), as_support(random_region(6, 3, rng)), head), 0.5);
}

TEST(ComparisonHead, OutputInOpenUnitInterval) {
  Rng rng(11);
  ComparisonHead head(6, 8);
  head.init(rng);
  for (int t = 0; t < 200; ++t) {
    const double s = head.score(random_region(6, 3, rng), as_support(random_region(6, 3, rng)));
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
  EXPECT_THROW(head.score(random_region(5, 3, rng), as_support(random_region(5, 3, rng))), UsageError);
}

TEST(ComparisonHead, GradientMatchesFiniteDifferences) {
  Rng rng(12);
  ComparisonHead head(4, 6);
  head.init(rng);
  for (double& v : head.fc().weight().value.values()) v = rng.normal();
  RegionFeature x = random_region(4, 3, rng), c = random_region(4, 3, rng);
  for (Param& p : head.parameters()) p.zero_grad();
  ComparisonCache cache;
  head.logit(x, as_support(c), &cache);
  Tensor gx(x.pooled.shape()), gc(c.pooled.shape());
  head.backward(x, as_support(c), cache, 1.0, &gx, &gc);
  Tensor px = x.pooled, pc = c.pooled;
  auto loss = [&] {
    return head.logit(RegionFeature::from_pooled(px), as_support(RegionFeature::from_pooled(pc)), nullptr);
  };
  for (Param& p : head.parameters()) {
    std::vector<size_t> all(p.value.size());
    std::iota(all.begin(), all.end(), size_t{0});
    const auto numeric = testing::numeric_grad(p.value.values(), all, loss);
    EXPECT_LT(testing::relative_error(p.grad.storage(), numeric), 1e-4) << p.name;
  }
  EXPECT_LT(input_grad_error(px, gx, loss), 1e-4);
  EXPECT_LT(input_grad_error(pc, gc, loss), 1e-4);
}

TEST(MultiClassHead, NormalizationAndOracle) {
  const auto u = softmax(std::vector<double>{2.0, 2.0, 2.0, 2.0});
  for (double p : u) EXPECT_NEAR(p, 0.25, 1e-15);
  const std::vector<double> z{1.0, -0.5, 3.0};
  const auto p = softmax(z);
  const double den = std::exp(1.0) + std::exp(-0.5) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], std::exp(z[i]) / den, 1e-12);
  const auto big = softmax(std::vector<double>{1000.0, 999.0});
  EXPECT_NEAR(big[0] + big[1], 1.0, 1e-12);

  Rng rng(13);
  MultiClassHead head(4 * 9, {1, 2, 3});
  head.init(rng);
  for (int t = 0; t < 50; ++t) {
    const auto q = multi_class_score(random_region(4, 3, rng), head);
    ASSERT_EQ(q.size(), 4u);
    EXPECT_NEAR(std::accumulate(q.begin(), q.end(), 0.0), 1.0, 1e-6);
  }
}

TEST(MultiClassHead, GradientMatchesFiniteDifferences) {
  Rng rng(14);
  MultiClassHead head(3 * 4, {4, 7});
  head.init(rng);
  RegionFeature x = random_region(3, 2, rng);
  const std::vector<double> w{0.3, -1.0, 0.6};
  for (Param& p : head.parameters()) p.zero_grad();
  Tensor gx(x.pooled.shape());
  head.backward(x, w, &gx);
  Tensor px = x.pooled;
  auto loss = [&] {
    const auto z = head.logits(RegionFeature::from_pooled(px));
    return std::inner_product(w.begin(), w.end(), z.begin(), 0.0);
  };
  for (Param& p : head.parameters()) {
    std::vector<size_t> all(p.value.size());
    std::iota(all.begin(), all.end(), size_t{0});
    EXPECT_LT(testing::relative_error(p.grad.storage(), testing::numeric_grad(p.value.values(), all, loss)),
              1e-6);
  }
  EXPECT_LT(input_grad_error(px, gx, loss), 1e-6);
}

TEST(BoxRegressor, InputSizes) {
  EXPECT_EQ(BoxRegressor(RegressorKind::kSemiExplicit, 32, 7, 16).input_size(), 2401 + 32);
  EXPECT_EQ(BoxRegressor(RegressorKind::kPlain, 32, 7, 16).input_size(), 32 * 49);
}

TEST(BoxRegressor, ZeroFinalLayerIsIdentity) {
  Rng rng(15);
  BoxRegressor reg(RegressorKind::kSemiExplicit, 4, 3, 8);
  reg.init(rng);
  EXPECT_EQ(semi_explicit_regress(random_region(4, 3, rng), as_support(random_region(4, 3, rng)), reg),
            BoxDelta{});
}

TEST(BoxRegressor, SupportOrderInvariance) {
  Rng rng(16);
  BoxRegressor reg(RegressorKind::kSemiExplicit, 4, 3, 8);
  reg.init(rng);
  for (double& v : reg.fc2().weight().value.values()) v = rng.normal();
  std::vector<RegionFeature> shots;
  for (int i = 0; i < 5; ++i) shots.push_back(random_region(4, 3, rng));
  const RegionFeature x = random_region(4, 3, rng);
  const BoxDelta a = semi_explicit_regress(x, support_prototype(shots, 1), reg);
  std::reverse(shots.begin(), shots.end());
  const BoxDelta b = semi_explicit_regress(x, support_prototype(shots, 1), reg);
  EXPECT_NEAR(a.dx, b.dx, 1e-12);
  EXPECT_NEAR(a.dy, b.dy, 1e-12);
  EXPECT_NEAR(a.dw, b.dw, 1e-12);
  EXPECT_NEAR(a.dh, b.dh, 1e-12);
}

TEST(BoxRegressor, GradientMatchesFiniteDifferences) {
  for (RegressorKind kind : {RegressorKind::kSemiExplicit, RegressorKind::kPlain}) {
    Rng rng(17);
    BoxRegressor reg(kind, 4, 3, 8);
    reg.init(rng);
    for (double& v : reg.fc2().weight().value.values()) v = rng.normal();
    RegionFeature x = random_region(4, 3, rng), c = random_region(4, 3, rng);
    const BoxDelta g{0.7, -0.4, 1.1, 0.2};
    for (Param& p : reg.parameters()) p.zero_grad();
    RegressorCache cache;
    reg.forward(x, as_support(c), &cache);
    Tensor gx(x.pooled.shape()), gc(c.pooled.shape());
    reg.backward(x, as_support(c), cache, g, &gx, &gc);
    Tensor px = x.pooled, pc = c.pooled;
    auto loss = [&] {
      const BoxDelta d =
          reg.forward(RegionFeature::from_pooled(px), as_support(RegionFeature::from_pooled(pc)), nullptr);
      return g.dx * d.dx + g.dy * d.dy + g.dw * d.dw + g.dh * d.dh;
    };
    for (Param& p : reg.parameters()) {
      const auto at = testing::probe_indices(p.value.size(), 200, rng);
      std::vector<double> analytic;
      for (size_t i : at) analytic.push_back(p.grad[i]);
      EXPECT_LT(testing::relative_error(analytic, testing::numeric_grad(p.value.values(), at, loss)), 1e-4)
          << p.name;
    }
    EXPECT_LT(input_grad_error(px, gx, loss), 1e-4);
    if (kind == RegressorKind::kSemiExplicit) {
      EXPECT_LT(input_grad_error(pc, gc, loss), 1e-4);
    } else {
      for (double v : gc.values()) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(ClassifyDynamic, DelegatesByMode) {
  Rng rng(18);
  ComparisonHead head(4, 6);
  head.init(rng);
  HeadConfig cfg;
  const RegionFeature x = random_region(4, 3, rng);
  const SupportFeature c = as_support(random_region(4, 3, rng));
  const double infer = classify_dynamic(x, c, ClassifierMode::kInfer, cfg, head);
  const double train = classify_dynamic(x, c, ClassifierMode::kTrain, cfg, head);
  EXPECT_EQ(train, comparison_score(x, c, head));
  EXPECT_EQ(infer, distance_score(x, c, cfg));
  for (double s : {infer, train}) {
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
  for (Param& p : head.parameters()) {
    for (double& v : p.value.values()) v += rng.normal();
  }
  EXPECT_EQ(classify_dynamic(x, c, ClassifierMode::kInfer, cfg, head), infer);
}

}  // namespace
}  // namespace irfsod
