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
#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include "irfsod/data.h"
#include "irfsod/errors.h"
#include "test_util.h"

namespace irfsod {
namespace {

namespace fs = std::filesystem;

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("irfsod_data_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  fs::path dir_;
};

const char* kCoco = R"({
  "info": {"base_categories": [1, 2], "novel_categories": [3]},
  "images": [{"id": 7, "file_name": "a.png", "width": 100, "height": 80},
             {"id": 8, "file_name": "b.png", "width": 100, "height": 80}],
  "categories": [{"id": 1, "name": "one"}, {"id": 2, "name": "two"}, {"id": 3, "name": "three"}],
  "annotations": [
    {"id": 1, "image_id": 7, "category_id": 1, "bbox": [10, 20, 30, 40]},
    {"id": 2, "image_id": 7, "category_id": 3, "bbox": [50, 5, 10, 10]},
    {"id": 3, "image_id": 8, "category_id": 2, "bbox": [0, 0, 5, 5], "iscrowd": 1},
    {"id": 4, "image_id": 8, "category_id": 2, "bbox": [1, 1, 9, 9]}
  ]
})";

TEST_F(TempDir, LoadsBaseRoleAndConvertsBoxes) {
  const fs::path p = write("ann.json", kCoco);
  const SplitSpec split = split_from_metadata(p);
  EXPECT_EQ(split.base, (std::vector<int>{1, 2}));
  EXPECT_EQ(split.novel, (std::vector<int>{3}));
  const DatasetSplit base = load_coco_annotations(p, split, SplitRole::kBase);
  ASSERT_EQ(base.records.size(), 2u);
  ASSERT_EQ(base.records[0].annotations.size(), 1u);  // novel annotation dropped
  EXPECT_EQ(base.records[0].annotations[0].box, (Box{10, 20, 40, 60}));
  ASSERT_EQ(base.records[1].annotations.size(), 1u);  // crowd annotation dropped
  EXPECT_EQ(base.records[1].annotations[0].id, 4);
  EXPECT_EQ(base.image_root, dir_);
  EXPECT_EQ(base.category_name(3), "three");

  const DatasetSplit novel = load_coco_annotations(p, split, SplitRole::kNovel);
  ASSERT_EQ(novel.records[0].annotations.size(), 1u);
  EXPECT_EQ(novel.records[0].annotations[0].category, 3);
  EXPECT_TRUE(novel.records[1].annotations.empty());
  EXPECT_EQ(load_coco_annotations(p, split, SplitRole::kAll).records[0].annotations.size(), 2u);
}

TEST_F(TempDir, OneImageOneAnnotation) {
  const fs::path p = write("one.json", R"({"images": [{"id": 1, "file_name": "x.png"}],
    "categories": [{"id": 5}], "annotations": [{"id": 1, "image_id": 1, "category_id": 5, "bbox": [0, 0, 2, 2]}]})");
  const DatasetSplit d = load_coco_annotations(p, {{5}, {}}, SplitRole::kBase);
  ASSERT_EQ(d.records.size(), 1u);
  EXPECT_EQ(d.records[0].annotations.size(), 1u);
}

TEST_F(TempDir, LoadErrors) {
  const SplitSpec split{{1}, {2}};
  EXPECT_THROW(load_coco_annotations(dir_ / "missing.json", split, SplitRole::kBase), DataError);
  EXPECT_THROW(load_coco_annotations(write("bad.json", "{not json"), split, SplitRole::kBase),
               DataError);
  EXPECT_THROW(load_coco_annotations(write("partial.json", R"({"images": []})"), split, SplitRole::kBase),
               DataError);
  EXPECT_THROW(load_coco_annotations(write("unknown_cat.json", R"({"images": [{"id": 1}],
      "categories": [{"id": 1}], "annotations": [{"image_id": 1, "category_id": 9, "bbox": [0,0,1,1]}]})"),
                                     split, SplitRole::kBase),
               DataError);
  EXPECT_THROW(load_coco_annotations(write("unknown_img.json", R"({"images": [{"id": 1}],
      "categories": [{"id": 1}], "annotations": [{"image_id": 4, "category_id": 1, "bbox": [0,0,1,1]}]})"),
                                     split, SplitRole::kBase),
               DataError);
  EXPECT_THROW(load_coco_annotations(write("bbox.json", R"({"images": [{"id": 1}],
      "categories": [{"id": 1}], "annotations": [{"image_id": 1, "category_id": 1, "bbox": [0,0,1]}]})"),
                                     split, SplitRole::kBase),
               DataError);
  EXPECT_THROW(split_from_metadata(write("nometa.json", R"({"images": []})")), DataError);
}

TEST(Split, Validation) {
  EXPECT_THROW((SplitSpec{{1, 2}, {2}}.validate()), UsageError);
  EXPECT_THROW((SplitSpec{{}, {2}}.validate()), UsageError);
  EXPECT_NO_THROW((SplitSpec{{1}, {}}.validate()));
}

TEST(Split, CocoPresetHasSixtyBaseAndTwentyNovel) {
  const SplitSpec s = coco_voc20_split();
  EXPECT_EQ(s.base.size(), 60u);
  EXPECT_EQ(s.novel.size(), 20u);
  EXPECT_NO_THROW(s.validate());
}

TEST(Split, TrainingRoleNeverExposesNovelIds) {
  const ShapesDataset d = generate_shapes_dataset(ShapesSpec{}, 3);
  const DatasetSplit base = filter_role(d.split, SplitRole::kBase);
  const std::set<int> novel(d.split.novel_categories.begin(), d.split.novel_categories.end());
  size_t total = 0;
  for (const auto& r : base.records) {
    for (const auto& a : r.annotations) {
      EXPECT_FALSE(novel.count(a.category));
      EXPECT_TRUE(a.box.valid());
      ++total;
    }
  }
  EXPECT_GT(total, 0u);
  EXPECT_EQ(base.records.size(), d.split.records.size());
}

TEST(SupportSampling, CountsDistinctnessAndDeterminism) {
  const ShapesDataset d = generate_shapes_dataset(ShapesSpec{}, 4);
  const std::vector<int> all = {1, 2, 3, 4, 5};
  Rng rng(1);
  const auto one = sample_support_sets(d.split, std::vector<int>{1, 2}, 1, rng);
  ASSERT_EQ(one.size(), 2u);
  for (const auto& s : one) EXPECT_EQ(s.items.size(), 1u);

  Rng a(9), b(9);
  const auto sets = sample_support_sets(d.split, all, 10, a);
  const auto again = sample_support_sets(d.split, all, 10, b);
  size_t total = 0;
  for (size_t i = 0; i < sets.size(); ++i) {
    EXPECT_EQ(sets[i].category, all[i]);
    total += sets[i].items.size();
    std::set<std::pair<int64_t, std::array<double, 4>>> seen;
    for (size_t k = 0; k < sets[i].items.size(); ++k) {
      const auto& it = sets[i].items[k];
      EXPECT_TRUE(seen.insert({it.image_id, {it.box.x1, it.box.y1, it.box.x2, it.box.y2}}).second);
      EXPECT_TRUE(d.split.find(it.image_id)->has_category(all[i]));
      EXPECT_EQ(it.image_id, again[i].items[k].image_id);
      EXPECT_EQ(it.box, again[i].items[k].box);
    }
  }
  EXPECT_EQ(total, 50u);
}

TEST(SupportSampling, ExclusionAndErrors) {
  const ShapesDataset d = generate_shapes_dataset(ShapesSpec{}, 5);
  Rng rng(2);
  std::vector<int64_t> exclude;
  for (size_t i = 0; i < d.split.records.size() / 2; ++i) exclude.push_back(d.split.records[i].id);
  const auto sets = sample_support_sets(d.split, std::vector<int>{1}, 5, rng, exclude);
  for (const auto& it : sets[0].items) {
    EXPECT_EQ(std::find(exclude.begin(), exclude.end(), it.image_id), exclude.end());
  }
  EXPECT_THROW(sample_support_sets(d.split, std::vector<int>{1}, 100000, rng), DataError);
  EXPECT_THROW(sample_support_sets(d.split, std::vector<int>{1}, 0, rng), UsageError);
}

TEST(Shapes, ConstructionBounds) {
  ShapesSpec spec;
  spec.num_images = 100;
  spec.max_instances = 3;
  const ShapesDataset d = generate_shapes_dataset(spec, 6);
  ASSERT_EQ(d.split.records.size(), 100u);
  ASSERT_EQ(d.images.size(), 100u);
  size_t total = 0;
  for (const auto& r : d.split.records) {
    EXPECT_LE(r.annotations.size(), 3u);
    for (const auto& a : r.annotations) {
      EXPECT_GE(a.box.x1, 0.0);
      EXPECT_GE(a.box.y1, 0.0);
      EXPECT_LE(a.box.x2, r.width);
      EXPECT_LE(a.box.y2, r.height);
      EXPECT_TRUE(a.box.valid());
    }
    total += r.annotations.size();
  }
  EXPECT_LE(total, 300u);
  EXPECT_GT(total, 100u);
}

TEST_F(TempDir, SameSeedByteIdenticalAnnotations) {
  ShapesSpec spec;
  spec.num_images = 20;
  write_coco_annotations(generate_shapes_dataset(spec, 11).split, dir_ / "a.json");
  write_coco_annotations(generate_shapes_dataset(spec, 11).split, dir_ / "b.json");
  write_coco_annotations(generate_shapes_dataset(spec, 12).split, dir_ / "c.json");
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  EXPECT_EQ(slurp(dir_ / "a.json"), slurp(dir_ / "b.json"));
  EXPECT_NE(slurp(dir_ / "a.json"), slurp(dir_ / "c.json"));
}

TEST(Shapes, RenderedExtentMatchesGroundTruth) {
  ShapesSpec spec;
  spec.num_images = 60;
  spec.noise = 0.0;
  spec.classes = {"circle", "square", "triangle", "star", "cross", "diamond", "ring", "hexagon"};
  spec.novel_classes = {"star"};
  const ShapesDataset d = generate_shapes_dataset(spec, 7);
  size_t checked = 0;
  for (size_t i = 0; i < d.images.size(); ++i) {
    const Image& img = d.images[i];
    for (const auto& a : d.split.records[i].annotations) {
      // Shapes are bright and the background dark; scan the GT box grown by
      // one pixel, which no other shape reaches.
      int minx = img.width, miny = img.height, maxx = -1, maxy = -1;
      const int x0 = std::max(0, static_cast<int>(a.box.x1) - 1);
      const int y0 = std::max(0, static_cast<int>(a.box.y1) - 1);
      const int x1 = std::min(img.width, static_cast<int>(a.box.x2) + 1);
      const int y1 = std::min(img.height, static_cast<int>(a.box.y2) + 1);
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const int m = std::max({img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)});
          if (m <= 140) continue;
          minx = std::min(minx, x);
          maxx = std::max(maxx, x);
          miny = std::min(miny, y);
          maxy = std::max(maxy, y);
        }
      }
      ASSERT_GE(maxx, 0);
      EXPECT_LE(std::abs(minx - a.box.x1), 1.0);
      EXPECT_LE(std::abs(miny - a.box.y1), 1.0);
      EXPECT_LE(std::abs(maxx + 1 - a.box.x2), 1.0);
      EXPECT_LE(std::abs(maxy + 1 - a.box.y2), 1.0);
      ++checked;
    }
  }
  EXPECT_GT(checked, 60u);
}

TEST(Shapes, SpecKeysAndValidation) {
  ShapesSpec spec;
  spec.set("shapes.num_images", "300");
  spec.set("shapes.classes", "circle, square,triangle");
  spec.set("shapes.novel_classes", "triangle");
  EXPECT_EQ(spec.num_images, 300);
  EXPECT_EQ(spec.classes.size(), 3u);
  EXPECT_NO_THROW(spec.validate());
  EXPECT_THROW(spec.set("shapes.bogus", "1"), UsageError);
  EXPECT_THROW(spec.set("shapes.num_images", "many"), UsageError);
  ShapesSpec bad;
  bad.classes = {"circle", "blob"};
  EXPECT_THROW(bad.validate(), UsageError);
  bad = ShapesSpec{};
  bad.novel_classes = bad.classes;
  EXPECT_THROW(bad.validate(), UsageError);
  bad = ShapesSpec{};
  bad.min_size = 40;
  bad.max_size = 20;
  EXPECT_THROW(generate_shapes_dataset(bad, 1), UsageError);
}

TEST_F(TempDir, ShapesOnDiskRoundTrip) {
  ShapesSpec spec;
  spec.num_images = 8;
  const ShapesDataset d = generate_shapes_dataset(spec, 13);
  const fs::path ann = write_shapes_dataset(d, dir_, "train.json");
  const DatasetSplit back = load_coco_annotations(ann, split_from_metadata(ann), SplitRole::kAll);
  ASSERT_EQ(back.records.size(), d.split.records.size());
  ImageStore store(back.image_root);
  for (size_t i = 0; i < back.records.size(); ++i) {
    EXPECT_EQ(back.records[i].annotations.size(), d.split.records[i].annotations.size());
    EXPECT_EQ(store.get(back.records[i]).pixels, d.images[i].pixels);
  }
}

TEST_F(TempDir, SupportDirRoundTrip) {
  ShapesSpec spec;
  spec.num_images = 30;
  testing::InMemoryShapes shapes(spec, 14);
  Rng rng(3);
  const auto sets = sample_support_sets(shapes.data.split, shapes.data.split.novel_categories, 4, rng);
  write_support_dir(shapes.data.split, sets, shapes.images, dir_ / "supports");
  const auto folders = read_support_dir(dir_ / "supports");
  ASSERT_EQ(folders.size(), sets.size());
  for (size_t i = 0; i < sets.size(); ++i) {
    EXPECT_EQ(folders[i].category, sets[i].category);
    EXPECT_EQ(folders[i].name, shapes.data.split.category_name(sets[i].category));
    ASSERT_EQ(folders[i].examples.size(), 4u);
    for (size_t k = 0; k < 4; ++k) {
      EXPECT_EQ(folders[i].examples[k].box, sets[i].items[k].box);
      const ImageRecord* rec = shapes.data.split.find(sets[i].items[k].image_id);
      EXPECT_EQ(folders[i].examples[k].image.pixels, shapes.images.get(*rec).pixels);
    }
  }
}

TEST_F(TempDir, SupportDirErrors) {
  EXPECT_THROW(read_support_dir(dir_ / "nope"), DataError);
  EXPECT_THROW(read_support_dir(dir_), DataError);  // no category folders
  fs::create_directories(dir_ / "cat");
  EXPECT_THROW(read_support_dir(dir_), DataError);  // no numeric id
  fs::remove_all(dir_ / "cat");
  fs::create_directories(dir_ / "3_star");
  EXPECT_THROW(read_support_dir(dir_), DataError);  // missing boxes.txt
  write_png(Image(10, 10), dir_ / "3_star" / "a.png");
  write("3_star/boxes.txt", "a.png 1 2\n");
  EXPECT_THROW(read_support_dir(dir_), DataError);
  write("3_star/boxes.txt", "a.png 5 5 20 20\n");
  EXPECT_THROW(read_support_dir(dir_), DataError);  // outside the image
  write("3_star/boxes.txt", "# comment\na.png 1 1 4 4\n");
  const auto ok = read_support_dir(dir_);
  ASSERT_EQ(ok.size(), 1u);
  EXPECT_EQ(ok[0].category, 3);
  EXPECT_EQ(ok[0].name, "star");
  EXPECT_EQ(ok[0].examples[0].box, (Box{1, 1, 5, 5}));
}

}  // namespace
}  // namespace irfsod
