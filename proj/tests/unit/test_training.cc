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
#include <filesystem>
#include <fstream>
#include <set>
#include <utility>

#include <unistd.h>

#include "irfsod/errors.h"
#include "irfsod/eval.h"
#include "irfsod/training.h"
#include "test_util.h"

namespace irfsod {
namespace {

namespace fs = std::filesystem;

ShapesSpec small_spec(int images = 40) {
  ShapesSpec spec;
  spec.num_images = images;
  spec.image_size = 48;
  spec.min_size = 10;
  spec.max_size = 20;
  return spec;
}

RunConfig tiny_config(const DatasetSplit& base) { return testing::tiny_config(base.base_categories); }

struct Fixture {
  testing::InMemoryShapes shapes;
  DatasetSplit base;

  explicit Fixture(int images = 40, uint64_t seed = 7)
      : shapes(small_spec(images), seed), base(filter_role(shapes.data.split, SplitRole::kBase)) {}
};

Fixture& shared_fixture() {
  static Fixture f;
  return f;
}

ContrastiveEpisode first_episode(const DatasetSplit& base, int shots, Rng& rng) {
  for (const auto& rec : base.records) {
    if (auto ep = build_contrastive_episode(rec, base, shots, rng)) return *ep;
  }
  throw std::runtime_error("no episode");
}

TEST(Episode, InvariantsOverManyDraws) {
  Fixture& f = shared_fixture();
  Rng rng(1);
  int built = 0;
  for (int t = 0; t < 1000; ++t) {
    const ImageRecord& q = f.base.records[rng.index(f.base.records.size())];
    const auto ep = build_contrastive_episode(q, f.base, 10, rng);
    if (!ep) continue;
    ++built;
    EXPECT_TRUE(q.has_category(ep->positive_category));
    EXPECT_FALSE(q.has_category(ep->negative_category));
    EXPECT_NE(ep->positive_category, ep->negative_category);
    for (int c : {ep->positive_category, ep->negative_category}) {
      EXPECT_NE(std::find(f.base.base_categories.begin(), f.base.base_categories.end(), c),
                f.base.base_categories.end());
    }
    ASSERT_EQ(ep->positive_support.items.size(), 10u);
    ASSERT_EQ(ep->negative_support.items.size(), 10u);
    for (const auto* set : {&ep->positive_support, &ep->negative_support}) {
      for (const auto& item : set->items) EXPECT_NE(item.image_id, q.id);
    }
  }
  EXPECT_GT(built, 300);
}

TEST(Episode, DeterministicPerSeed) {
  Fixture& f = shared_fixture();
  Rng a(5), b(5);
  const auto e1 = first_episode(f.base, 10, a);
  const auto e2 = first_episode(f.base, 10, b);
  EXPECT_EQ(e1.query_id, e2.query_id);
  EXPECT_EQ(e1.positive_category, e2.positive_category);
  EXPECT_EQ(e1.negative_category, e2.negative_category);
  for (size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(e1.positive_support.items[i].image_id, e2.positive_support.items[i].image_id);
    EXPECT_EQ(e1.negative_support.items[i].box, e2.negative_support.items[i].box);
  }
}

TEST(Episode, SkippedWhenNoAbsentCategory) {
  DatasetSplit base;
  base.base_categories = {1, 2};
  for (int i = 1; i <= 5; ++i) {
    base.records.push_back({i, "", 50, 50, {{i * 10, 1, {0, 0, 9, 9}}, {i * 10 + 1, 2, {9, 9, 20, 20}}}});
  }
  Rng rng(2);
  EXPECT_FALSE(build_contrastive_episode(base.records[0], base, 2, rng).has_value());
}

TEST(RoiLosses, ClassificationCases) {
  const std::vector<Box> props{{0, 0, 10, 10}, {0, 0, 10, 11}, {30, 30, 40, 40}, {50, 50, 60, 60}};
  const std::vector<Box> gt{{0, 0, 10, 10}};
  const std::vector<double> half(4, 0.5);
  EXPECT_NEAR(roi_classification_loss(props, half, half, gt, 0.5), std::log(2.0), 1e-12);

  const std::vector<double> perfect1{1 - 1e-12, 1 - 1e-12, 1e-12, 1e-12}, perfect2(4, 1e-12);
  EXPECT_LT(roi_classification_loss(props, perfect1, perfect2, gt, 0.5), 1e-9);

  const std::vector<double> s1{0.9, 0.6, 0.3, 0.05}, s2{0.2, 0.4, 0.1, 0.7};
  const double y1[] = {1, 1, 0, 0};
  double oracle = 0.0;
  for (int i = 0; i < 4; ++i) {
    oracle -= y1[i] * std::log(s1[i]) + (1 - y1[i]) * std::log(1 - s1[i]);
    oracle -= std::log(1 - s2[i]);
  }
  EXPECT_NEAR(roi_classification_loss(props, s1, s2, gt, 0.5), oracle / 8.0, 1e-6);
  EXPECT_THROW(roi_classification_loss(props, s1, std::vector<double>{0.5, 0.5, 0.5}, gt, 0.5),
               UsageError) << "mismatched counts";
}

TEST(RoiLosses, RegressionCases) {
  const std::vector<Box> props{{0, 0, 10, 10}, {40, 40, 50, 50}};
  const std::vector<Box> gt{{1, 1, 11, 11}};
  const BoxDelta target = encode_delta(gt[0], props[0]);
  std::vector<BoxDelta> pred{target, {5, 5, 5, 5}};
  EXPECT_EQ(roi_regression_loss(props, pred, gt, 0.5), 0.0);  // unmatched proposal ignored
  pred[0] = {target.dx + 1, target.dy - 1, target.dw + 1, target.dh - 1};
  EXPECT_NEAR(roi_regression_loss(props, pred, gt, 0.5), 4 * 0.5, 1e-12);
  EXPECT_EQ(roi_regression_loss(props, pred, std::vector<Box>{}, 0.5), 0.0);
}

TEST(TotalLoss, SumsExactly) {
  EXPECT_EQ(total_loss(0.5, 0.5, 2, 3).total, 6.0);
  EXPECT_EQ(total_loss(0, 0, 0, 0).total, 0.0);
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const double a = rng.uniform(), b = rng.uniform(), c = rng.uniform(), d = rng.uniform();
    EXPECT_EQ(total_loss(a, b, c, d).total, ((a + b) + c) + d);
  }
  EXPECT_THROW(total_loss(std::nan(""), 0, 0, 0), NumericalError);
  EXPECT_THROW(total_loss(0, 0, INFINITY, 0), NumericalError);
}

TEST(Schedule, MilestonesDecayByGamma) {
  TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.milestones = {10, 20};
  EXPECT_DOUBLE_EQ(tc.lr_at(9), 0.01);
  EXPECT_DOUBLE_EQ(tc.lr_at(10), 0.001);
  EXPECT_NEAR(tc.lr_at(25), 0.0001, 1e-18);
  const TrainConfig full = TrainConfig::full_scale();
  EXPECT_EQ(full.iterations, 120000);
  EXPECT_DOUBLE_EQ(full.learning_rate, 0.003);
}

TEST(Optimizer, MomentumAndWeightDecay) {
  Param p("w", {1});
  p.value[0] = 1.0;
  ParamRefs refs{p};
  SgdOptimizer opt(0.9, 0.1);
  p.grad[0] = 2.0;
  opt.step(refs, 0.5);
  EXPECT_NEAR(p.value[0], 1.0 - 0.5 * 2.1, 1e-15);
  p.grad[0] = 0.0;
  const double w = p.value[0];
  opt.step(refs, 0.5);
  EXPECT_NEAR(p.value[0], w - 0.5 * (0.9 * 2.1 + 0.1 * w), 1e-15);
}

TEST(Optimizer, GradientClipping) {
  Param a("a", {2}), b("b", {1});
  a.grad[0] = 3;
  a.grad[1] = 0;
  b.grad[0] = 4;
  ParamRefs refs{a, b};
  EXPECT_DOUBLE_EQ(clip_gradients(refs, 10.0), 5.0);
  EXPECT_EQ(b.grad[0], 4.0);
  EXPECT_DOUBLE_EQ(clip_gradients(refs, 1.0), 5.0);
  EXPECT_NEAR(a.grad[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad[0], 0.8, 1e-15);
  b.grad[0] = NAN;
  EXPECT_THROW(clip_gradients(refs, 1.0), NumericalError);
}

TEST(LogRecord, JsonFields) {
  const TrainLogRecord rec{3, total_loss(0.1, 0.2, 0.3, 0.4), 0.01, 2, 1.5};
  const std::string s = format_log_record(rec);
  for (const char* key : {"\"iteration\": 3", "\"L_rpn\"", "\"L_cls\"", "\"L_reg\"", "\"total\"", "\"lr\"",
                          "\"pseudo_positives\": 2", "\"grad_norm\""}) {
    EXPECT_NE(s.find(key), std::string::npos) << key;
  }
}

TEST(Plan, RoiSamplesRespectFractions) {
  Fixture& f = shared_fixture();
  Detector model(tiny_config(f.base));
  model.init(1);
  Rng rng(4);
  const auto ep = first_episode(f.base, 3, rng);
  const StepPlan plan = plan_step(model, ep, f.base, f.shapes.images, rng);
  ASSERT_FALSE(plan.rois.empty());
  size_t fg = 0;
  for (const auto& s : plan.rois) {
    fg += s.foreground;
    EXPECT_EQ(s.foreground, s.matched_gt.has_value());
    if (s.foreground) EXPECT_GT(s.multi_label, 0);
  }
  EXPECT_GE(fg, 1u);  // ground-truth boxes are always candidates
  EXPECT_LE(fg, 4u);
  EXPECT_LE(plan.rois.size(), 8u);
  EXPECT_FALSE(plan.sampled_anchors.empty());
}

TEST(Training, FrozenEpisodeLossDecreases) {
  Fixture& f = shared_fixture();
  Detector model(tiny_config(f.base));
  model.init(2);
  Rng rng(5);
  const auto ep = first_episode(f.base, 3, rng);
  const StepPlan plan = plan_step(model, ep, f.base, f.shapes.images, rng);
  const auto losses = train_on_plan(model, plan, f.base, f.shapes.images, 50, 1e-3);
  ASSERT_EQ(losses.size(), 51u);
  for (size_t i = 1; i < losses.size(); ++i) {
    EXPECT_LT(losses[i].total, losses[i - 1].total) << "step " << i;
  }
}

TEST(Training, SameSeedSameParameters) {
  Fixture& f = shared_fixture();
  auto run = [&] {
    Detector model(tiny_config(f.base));
    model.init(3);
    std::vector<TrainLogRecord> log;
    train(model, f.base, f.shapes.images, [&](const TrainLogRecord& r) { log.push_back(r); });
    EXPECT_EQ(log.size(), 4u);
    for (const auto& r : log) {
      EXPECT_EQ(r.loss.total, ((r.loss.rpn_cls + r.loss.rpn_reg) + r.loss.cls) + r.loss.reg);
      EXPECT_TRUE(std::isfinite(r.loss.total));
    }
    return model.parameter_hash();
  };
  EXPECT_EQ(run(), run());
}

TEST(Training, NoEligibleEpisodeIsDataError) {
  Fixture& f = shared_fixture();
  RunConfig cfg = tiny_config(f.base);
  cfg.set("train.shots", "1000");
  Detector model(cfg);
  model.init(1);
  EXPECT_THROW(train(model, f.base, f.shapes.images), DataError);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("irfsod_ckpt_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

std::string read_all(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void write_all(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
}

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  Fixture& f = shared_fixture();
  Detector model(tiny_config(f.base));
  model.init(9);
  model.mutable_config().set("heads.alpha", "0.3");
  save_checkpoint(model, dir_ / "m.ckpt");
  const Detector back = load_checkpoint(dir_ / "m.ckpt");
  EXPECT_EQ(back.parameter_hash(), model.parameter_hash());
  EXPECT_EQ(back.config().to_text(), model.config().to_text());
  const auto a = std::as_const(model).parameters();
  const auto b = back.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->name, b[i]->name);
    EXPECT_EQ(a[i]->value, b[i]->value);
  }
}

TEST_F(CheckpointTest, InferenceIdenticalAfterLoad) {
  Fixture& f = shared_fixture();
  Detector model(tiny_config(f.base));
  model.init(10);
  model.mutable_config().set("heads.score_threshold", "0.05");
  Rng rng(11);
  const int novel[] = {f.shapes.data.split.novel_categories[0]};
  const DatasetSplit novel_split = filter_role(f.shapes.data.split, SplitRole::kNovel);
  const auto sets = sample_support_sets(novel_split, novel, 2, rng);
  const auto supports = encode_supports(model, sets, novel_split, f.shapes.images);
  const Image& img = f.shapes.images.get(f.base.records[0]);
  const auto before = detect(model, img, supports);
  save_checkpoint(model, dir_ / "m.ckpt");
  const Detector back = load_checkpoint(dir_ / "m.ckpt");
  const auto after = detect(back, img, encode_supports(back, sets, novel_split, f.shapes.images));
  ASSERT_EQ(before.size(), after.size());
  for (size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(before[i].box, after[i].box);
    EXPECT_EQ(before[i].score, after[i].score);
    EXPECT_EQ(before[i].category, after[i].category);
  }
}

TEST_F(CheckpointTest, RejectsWrongVersionAndCorruption) {
  Fixture& f = shared_fixture();
  Detector model(tiny_config(f.base));
  model.init(12);
  save_checkpoint(model, dir_ / "m.ckpt");
  const std::string good = read_all(dir_ / "m.ckpt");

  std::string bad = good;
  bad[6] = 7;  // version field follows the magic
  write_all(dir_ / "v.ckpt", bad);
  try {
    load_checkpoint(dir_ / "v.ckpt");
    FAIL() << "expected version error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }

  bad = good;
  bad[bad.size() / 2] ^= 0x5a;
  write_all(dir_ / "c.ckpt", bad);
  EXPECT_THROW(load_checkpoint(dir_ / "c.ckpt"), DataError);

  write_all(dir_ / "t.ckpt", good.substr(0, good.size() / 3));
  EXPECT_THROW(load_checkpoint(dir_ / "t.ckpt"), DataError);

  bad = good;
  bad[0] = 'X';
  write_all(dir_ / "x.ckpt", bad);
  EXPECT_THROW(load_checkpoint(dir_ / "x.ckpt"), DataError);
  EXPECT_THROW(load_checkpoint(dir_ / "missing.ckpt"), DataError);
}

// Whole-model backward pass (backbone, proposal network, heads, both
// branches) against central differences of the frozen-plan loss.
void check_end_to_end(const char* classifier, const char* regressor) {
  Fixture& f = shared_fixture();
  RunConfig cfg = tiny_config(f.base);
  cfg.set("ablation.classifier", classifier);
  cfg.set("ablation.regressor", regressor);
  Detector model(cfg);
  model.init(13);
  // Non-zero regressor output layer so its gradient reaches the features.
  Rng rng(14);
  for (double& v : model.regressor.fc2().weight().value.values()) v = 0.1 * rng.normal();
  const auto ep = first_episode(f.base, 3, rng);
  const StepPlan plan = plan_step(model, ep, f.base, f.shapes.images, rng);

  model.zero_grad();
  evaluate_step(model, plan, f.base, f.shapes.images, true);
  auto loss = [&] { return evaluate_step(model, plan, f.base, f.shapes.images, false).total; };
  std::vector<double> analytic, numeric;
  for (Param& p : model.parameters()) {
    const auto at = testing::probe_indices(p.value.size(), 12, rng);
    const auto num = testing::numeric_grad(p.value.values(), at, loss);
    for (size_t k = 0; k < at.size(); ++k) {
      analytic.push_back(p.grad[at[k]]);
      numeric.push_back(num[k]);
    }
  }
  double norm = 0.0;
  for (double g : analytic) norm += g * g;
  EXPECT_GT(norm, 0.0);
  EXPECT_LT(testing::relative_error(analytic, numeric), 1e-3) << classifier << " / " << regressor;
}

TEST(EndToEndGradient, DynamicSemiExplicit) { check_end_to_end("dynamic", "semi_explicit"); }
TEST(EndToEndGradient, DistancePlain) { check_end_to_end("distance", "plain"); }
TEST(EndToEndGradient, Multi) { check_end_to_end("multi", "semi_explicit"); }

}  // namespace
}  // namespace irfsod
