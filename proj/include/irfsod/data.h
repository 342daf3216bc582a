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
#ifndef IRFSOD_DATA_H_
#define IRFSOD_DATA_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "irfsod/geometry.h"
#include "irfsod/image.h"
#include "irfsod/rng.h"

namespace irfsod {

struct Annotation {
  int64_t id = 0;
  int category = 0;
  Box box;
};

struct ImageRecord {
  int64_t id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
  std::vector<Annotation> annotations;

  bool has_category(int category) const;
};

struct Category {
  int id = 0;
  std::string name;
};

// Which category ids play the base and novel roles.
struct SplitSpec {
  std::vector<int> base;
  std::vector<int> novel;

  void validate() const;  // disjoint, non-empty base
};

// The 20 novel COCO categories shared with PASCAL VOC; the other 60 of the
// 80 COCO categories are base.
SplitSpec coco_voc20_split();

// Which annotations a loaded split exposes.
enum class SplitRole {
  kBase,   // base-category annotations only (base training)
  kNovel,  // novel-category annotations only (test queries and supports)
  kAll,
};

struct DatasetSplit {
  std::vector<int> base_categories;
  std::vector<int> novel_categories;
  std::vector<Category> categories;
  std::vector<ImageRecord> records;
  std::filesystem::path image_root;

  const ImageRecord* find(int64_t image_id) const;
  std::string category_name(int id) const;
  // Number of annotations per category among `records`.
  std::map<int, size_t> instance_counts() const;
};

// Reads COCO annotation JSON. Boxes are converted from [x, y, w, h] to
// corners; crowd annotations, degenerate boxes, and categories outside the
// role's set are dropped. Throws DataError for missing files, malformed
// JSON, or annotations that reference unknown category ids.
DatasetSplit load_coco_annotations(const std::filesystem::path& path, const SplitSpec& split,
                                   SplitRole role);

// Split declared inside a file written by write_coco_annotations (the
// "info" block's base/novel lists).
SplitSpec split_from_metadata(const std::filesystem::path& path);

// Writes COCO JSON including every annotation in `records` and the split in
// info.base_categories / info.novel_categories.
void write_coco_annotations(const DatasetSplit& data, const std::filesystem::path& path);

struct SupportItem {
  int64_t image_id = 0;
  Box box;
};

struct SupportSet {
  int category = 0;
  std::vector<SupportItem> items;
};

// K distinct instances per requested category, uniform under rng. Images in
// `exclude_images` are never used. Throws DataError when a category has
// fewer than K eligible instances.
std::vector<SupportSet> sample_support_sets(const DatasetSplit& split,
                                            std::span<const int> categories, int shots, Rng& rng,
                                            std::span<const int64_t> exclude_images = {});

// Image pixels keyed by image id: either preloaded (generated data) or read
// lazily from image_root / file_name.
class ImageStore {
 public:
  ImageStore() = default;
  explicit ImageStore(std::filesystem::path root) : root_(std::move(root)) {}

  void put(int64_t id, Image image) { cache_[id] = std::move(image); }
  const Image& get(const ImageRecord& record);
  bool contains(int64_t id) const { return cache_.count(id) > 0; }

 private:
  std::filesystem::path root_;
  std::map<int64_t, Image> cache_;
};

enum class ShapeKind { kCircle, kSquare, kTriangle, kStar, kCross, kDiamond, kRing, kHexagon };

std::optional<ShapeKind> shape_from_name(const std::string& name);
const char* shape_name(ShapeKind kind);

// Synthetic detection data: filled shapes on a noisy background.
struct ShapesSpec {
  std::vector<std::string> classes{"circle", "square", "triangle", "star", "cross"};
  std::vector<std::string> novel_classes{"star", "cross"};
  int num_images = 100;
  int image_size = 64;
  int min_instances = 1;
  int max_instances = 3;
  double min_size = 14.0;
  double max_size = 30.0;
  double aspect_jitter = 0.2;  // width/height ratio in [1 - j, 1 + j]
  // "class": each class owns a hue, jittered by color_jitter (fraction of
  // the hue circle); "random": any hue for any class.
  std::string color_mode = "random";
  double color_jitter = 0.05;
  double noise = 4.0;  // std of additive pixel noise
  int first_image_id = 1;

  // "shapes.<field>" keys, e.g. shapes.num_images = 300; lists are
  // comma-separated. Throws UsageError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  void validate() const;
};

struct ShapesDataset {
  DatasetSplit split;  // all annotations, both roles
  std::vector<Image> images;  // parallel to split.records
};

// Deterministic per (spec, seed). Instances do not overlap; GT boxes are the
// tight boxes of the rendered pixels.
ShapesDataset generate_shapes_dataset(const ShapesSpec& spec, uint64_t seed);

// Writes images/<id>.png and the annotation file; returns its path.
std::filesystem::path write_shapes_dataset(const ShapesDataset& data,
                                           const std::filesystem::path& dir,
                                           const std::string& annotation_name);

// Support instances stored on disk: one sub-directory per category named
// "<category id>" or "<category id>_<name>", holding the images and a
// boxes.txt with one "file x y w h" line per instance.
struct SupportExample {
  std::string file_name;
  Image image;
  Box box;
};

struct SupportFolder {
  int category = 0;
  std::string name;
  std::vector<SupportExample> examples;
};

std::vector<SupportFolder> read_support_dir(const std::filesystem::path& dir);
void write_support_dir(const DatasetSplit& source, std::span<const SupportSet> sets,
                       ImageStore& images, const std::filesystem::path& dir);

// Keeps only annotations of the role's categories.
DatasetSplit filter_role(const DatasetSplit& split, SplitRole role);

}  // namespace irfsod

#endif  // IRFSOD_DATA_H_
