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
#include "irfsod/data.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "irfsod/errors.h"
#include "json.hpp"

namespace irfsod {

using json = nlohmann::json;

bool ImageRecord::has_category(int category) const {
  return std::any_of(annotations.begin(), annotations.end(),
                     [&](const Annotation& a) { return a.category == category; });
}

void SplitSpec::validate() const {
  if (base.empty()) throw UsageError("split: base category set is empty");
  std::set<int> b(base.begin(), base.end());
  for (int n : novel) {
    if (b.count(n)) throw UsageError("split: category " + std::to_string(n) + " is both base and novel");
  }
}

SplitSpec coco_voc20_split() {
  const std::vector<int> novel = {1, 2, 3, 4, 5, 6, 7, 9, 16, 17, 18, 19, 20, 21, 44, 62, 63, 64, 67, 72};
  const std::set<int> unused = {12, 26, 29, 30, 45, 66, 68, 69, 71, 83};
  SplitSpec s;
  s.novel = novel;
  for (int id = 1; id <= 90; ++id) {
    if (unused.count(id) || std::find(novel.begin(), novel.end(), id) != novel.end()) continue;
    s.base.push_back(id);
  }
  return s;
}

const ImageRecord* DatasetSplit::find(int64_t image_id) const {
  for (const auto& r : records) {
    if (r.id == image_id) return &r;
  }
  return nullptr;
}

std::string DatasetSplit::category_name(int id) const {
  for (const auto& c : categories) {
    if (c.id == id) return c.name;
  }
  return std::to_string(id);
}

std::map<int, size_t> DatasetSplit::instance_counts() const {
  std::map<int, size_t> counts;
  for (const auto& r : records) {
    for (const auto& a : r.annotations) ++counts[a.category];
  }
  return counts;
}

namespace {

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open annotation file: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::set<int> role_categories(const SplitSpec& split, SplitRole role) {
  std::set<int> keep;
  if (role != SplitRole::kNovel) keep.insert(split.base.begin(), split.base.end());
  if (role != SplitRole::kBase) keep.insert(split.novel.begin(), split.novel.end());
  return keep;
}

}  // namespace

DatasetSplit load_coco_annotations(const std::filesystem::path& path, const SplitSpec& split,
                                   SplitRole role) {
  split.validate();
  const json doc = read_json(path);
  DatasetSplit out;
  out.base_categories = split.base;
  out.novel_categories = split.novel;
  out.image_root = path.parent_path();
  try {
    if (!doc.contains("images") || !doc.contains("annotations") || !doc.contains("categories")) {
      throw DataError("COCO file lacks images/annotations/categories: " + path.string());
    }
    std::set<int> known;
    for (const auto& c : doc.at("categories")) {
      out.categories.push_back({c.at("id").get<int>(), c.value("name", std::string())});
      known.insert(out.categories.back().id);
    }
    std::map<int64_t, size_t> index;
    for (const auto& im : doc.at("images")) {
      ImageRecord r;
      r.id = im.at("id").get<int64_t>();
      r.file_name = im.value("file_name", std::string());
      r.width = im.value("width", 0);
      r.height = im.value("height", 0);
      index[r.id] = out.records.size();
      out.records.push_back(std::move(r));
    }
    const std::set<int> keep = role_categories(split, role);
    for (const auto& a : doc.at("annotations")) {
      const int cat = a.at("category_id").get<int>();
      if (!known.count(cat)) {
        throw DataError("annotation references unknown category id " + std::to_string(cat));
      }
      if (a.value("iscrowd", 0) != 0) continue;
      if (!keep.count(cat)) continue;
      const auto& bb = a.at("bbox");
      if (bb.size() != 4) throw DataError("bbox must have 4 entries");
      const Box box = Box::from_xywh(bb[0].get<double>(), bb[1].get<double>(),
                                     bb[2].get<double>(), bb[3].get<double>());
      if (!box.valid()) continue;
      const int64_t image_id = a.at("image_id").get<int64_t>();
      auto it = index.find(image_id);
      if (it == index.end()) {
        throw DataError("annotation references unknown image id " + std::to_string(image_id));
      }
      out.records[it->second].annotations.push_back({a.value("id", int64_t{0}), cat, box});
    }
  } catch (const json::exception& e) {
    throw DataError("malformed COCO annotations in " + path.string() + ": " + e.what());
  }
  return out;
}

SplitSpec split_from_metadata(const std::filesystem::path& path) {
  const json doc = read_json(path);
  SplitSpec s;
  try {
    const auto& info = doc.at("info");
    s.base = info.at("base_categories").get<std::vector<int>>();
    s.novel = info.at("novel_categories").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw DataError("annotation file " + path.string() + " carries no split metadata: " + e.what());
  }
  s.validate();
  return s;
}

void write_coco_annotations(const DatasetSplit& data, const std::filesystem::path& path) {
  json doc;
  doc["info"] = {{"description", "irfsod dataset"},
                 {"base_categories", data.base_categories},
                 {"novel_categories", data.novel_categories}};
  json cats = json::array();
  for (const auto& c : data.categories) {
    const bool novel = std::find(data.novel_categories.begin(), data.novel_categories.end(),
                                 c.id) != data.novel_categories.end();
    cats.push_back({{"id", c.id}, {"name", c.name}, {"split", novel ? "novel" : "base"}});
  }
  json images = json::array();
  json anns = json::array();
  for (const auto& r : data.records) {
    images.push_back({{"id", r.id}, {"file_name", r.file_name}, {"width", r.width},
                      {"height", r.height}});
    for (const auto& a : r.annotations) {
      anns.push_back({{"id", a.id},
                      {"image_id", r.id},
                      {"category_id", a.category},
                      {"bbox", {a.box.x1, a.box.y1, a.box.width(), a.box.height()}},
                      {"area", a.box.area()},
                      {"iscrowd", 0}});
    }
  }
  doc["images"] = std::move(images);
  doc["annotations"] = std::move(anns);
  doc["categories"] = std::move(cats);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write annotation file: " + path.string());
  out << doc.dump(1) << '\n';
  if (!out) throw DataError("failed writing annotation file: " + path.string());
}

std::vector<SupportSet> sample_support_sets(const DatasetSplit& split,
                                            std::span<const int> categories, int shots, Rng& rng,
                                            std::span<const int64_t> exclude_images) {
  if (shots < 1) throw UsageError("support sets need at least one shot");
  const std::set<int64_t> excluded(exclude_images.begin(), exclude_images.end());
  std::vector<SupportSet> out;
  for (int cat : categories) {
    std::vector<SupportItem> pool;
    for (const auto& r : split.records) {
      if (excluded.count(r.id)) continue;
      for (const auto& a : r.annotations) {
        if (a.category == cat) pool.push_back({r.id, a.box});
      }
    }
    if (pool.size() < static_cast<size_t>(shots)) {
      throw DataError("category " + std::to_string(cat) + " has " + std::to_string(pool.size()) +
                      " instances, fewer than the " + std::to_string(shots) + " shots requested");
    }
    SupportSet set{cat, {}};
    for (size_t i : rng.choose(pool.size(), static_cast<size_t>(shots))) {
      set.items.push_back(pool[i]);
    }
    out.push_back(std::move(set));
  }
  return out;
}

const Image& ImageStore::get(const ImageRecord& record) {
  auto it = cache_.find(record.id);
  if (it != cache_.end()) return it->second;
  Image img = read_image(root_ / record.file_name);
  return cache_.emplace(record.id, std::move(img)).first->second;
}

DatasetSplit filter_role(const DatasetSplit& split, SplitRole role) {
  SplitSpec spec{split.base_categories, split.novel_categories};
  const std::set<int> keep = role_categories(spec, role);
  DatasetSplit out = split;
  for (auto& r : out.records) {
    std::erase_if(r.annotations, [&](const Annotation& a) { return !keep.count(a.category); });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic shapes.

namespace {

constexpr std::array<std::pair<ShapeKind, const char*>, 8> kShapeNames = {{
    {ShapeKind::kCircle, "circle"},
    {ShapeKind::kSquare, "square"},
    {ShapeKind::kTriangle, "triangle"},
    {ShapeKind::kStar, "star"},
    {ShapeKind::kCross, "cross"},
    {ShapeKind::kDiamond, "diamond"},
    {ShapeKind::kRing, "ring"},
    {ShapeKind::kHexagon, "hexagon"},
}};

using Polygon = std::vector<std::pair<double, double>>;

// Polygon rescaled so its bounding box is exactly [-1, 1]^2.
Polygon normalized(Polygon poly) {
  double x0 = 1e9, x1 = -1e9, y0 = 1e9, y1 = -1e9;
  for (auto [x, y] : poly) {
    x0 = std::min(x0, x); x1 = std::max(x1, x);
    y0 = std::min(y0, y); y1 = std::max(y1, y);
  }
  for (auto& [x, y] : poly) {
    x = 2.0 * (x - x0) / (x1 - x0) - 1.0;
    y = 2.0 * (y - y0) / (y1 - y0) - 1.0;
  }
  return poly;
}

Polygon regular(int points, double inner_ratio) {
  Polygon p;
  const int n = inner_ratio > 0 ? 2 * points : points;
  for (int i = 0; i < n; ++i) {
    const double r = (inner_ratio > 0 && i % 2 == 1) ? inner_ratio : 1.0;
    const double a = -std::numbers::pi / 2 + 2.0 * std::numbers::pi * i / n;
    p.emplace_back(r * std::cos(a), r * std::sin(a));
  }
  return normalized(p);
}

bool inside_polygon(const Polygon& poly, double x, double y) {
  bool in = false;
  for (size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [xi, yi] = poly[i];
    const auto [xj, yj] = poly[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
  }
  return in;
}

// Membership test in the unit frame [-1, 1]^2.
bool inside_shape(ShapeKind kind, double u, double v) {
  static const Polygon star = regular(5, 0.45);
  static const Polygon hexagon = regular(6, 0.0);
  static const Polygon triangle = {{0.0, -1.0}, {1.0, 1.0}, {-1.0, 1.0}};
  switch (kind) {
    case ShapeKind::kCircle: return u * u + v * v <= 1.0;
    case ShapeKind::kSquare: return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
    case ShapeKind::kTriangle: return inside_polygon(triangle, u, v);
    case ShapeKind::kStar: return inside_polygon(star, u, v);
    case ShapeKind::kCross:
      return std::abs(u) <= 1.0 && std::abs(v) <= 1.0 &&
             (std::abs(u) <= 0.34 || std::abs(v) <= 0.34);
    case ShapeKind::kDiamond: return std::abs(u) + std::abs(v) <= 1.0;
    case ShapeKind::kRing: {
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.3;
    }
    case ShapeKind::kHexagon: return inside_polygon(hexagon, u, v);
  }
  return false;
}

std::array<uint8_t, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  auto to8 = [](double t) { return static_cast<uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0)); };
  return {to8(r + m), to8(g + m), to8(b + m)};
}

uint8_t clamp8(double v) { return static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

std::optional<ShapeKind> shape_from_name(const std::string& name) {
  for (const auto& [kind, n] : kShapeNames) {
    if (name == n) return kind;
  }
  return std::nullopt;
}

const char* shape_name(ShapeKind kind) {
  for (const auto& [k, n] : kShapeNames) {
    if (k == kind) return n;
  }
  return "unknown";
}

void ShapesSpec::validate() const {
  if (classes.empty()) throw UsageError("shapes: no classes");
  std::set<std::string> seen;
  for (const auto& c : classes) {
    if (!shape_from_name(c)) throw UsageError("shapes: unknown shape class '" + c + "'");
    if (!seen.insert(c).second) throw UsageError("shapes: duplicate class '" + c + "'");
  }
  for (const auto& c : novel_classes) {
    if (!seen.count(c)) throw UsageError("shapes: novel class '" + c + "' is not in classes");
  }
  if (novel_classes.size() >= classes.size()) throw UsageError("shapes: no base classes left");
  if (num_images < 1 || image_size < 8) throw UsageError("shapes: need >= 1 image of size >= 8");
  if (min_instances < 0 || max_instances < min_instances) {
    throw UsageError("shapes: invalid instance range");
  }
  if (!(min_size >= 3.0) || max_size < min_size || max_size > image_size) {
    throw UsageError("shapes: invalid size range");
  }
  if (!(aspect_jitter >= 0.0 && aspect_jitter < 1.0)) throw UsageError("shapes: aspect_jitter must lie in [0, 1)");
  if (color_mode != "class" && color_mode != "random") {
    throw UsageError("shapes: color_mode must be 'class' or 'random'");
  }
  if (noise < 0.0) throw UsageError("shapes: noise must be >= 0");
}

ShapesDataset generate_shapes_dataset(const ShapesSpec& spec, uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ShapesDataset out;
  DatasetSplit& split = out.split;
  std::vector<ShapeKind> kinds;
  for (size_t i = 0; i < spec.classes.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    split.categories.push_back({id, spec.classes[i]});
    kinds.push_back(*shape_from_name(spec.classes[i]));
    const bool novel = std::find(spec.novel_classes.begin(), spec.novel_classes.end(),
                                 spec.classes[i]) != spec.novel_classes.end();
    (novel ? split.novel_categories : split.base_categories).push_back(id);
  }

  const int size = spec.image_size;
  int64_t ann_id = 1;
  for (int n = 0; n < spec.num_images; ++n) {
    ImageRecord rec;
    rec.id = spec.first_image_id + n;
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06lld.png", static_cast<long long>(rec.id));
    rec.file_name = name;
    rec.width = size;
    rec.height = size;

    Image img(size, size);
    const double bg = rng.uniform(30.0, 90.0);
    const double bg_tint[3] = {rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)};
    std::vector<int> owner(static_cast<size_t>(size) * size, -1);
    std::vector<std::array<uint8_t, 3>> colors;

    const int target = spec.min_instances +
                       static_cast<int>(rng.index(static_cast<size_t>(spec.max_instances - spec.min_instances + 1)));
    std::vector<Box> placed;
    for (int k = 0, attempts = 0; k < target && attempts < 60; ++attempts) {
      const size_t cls = rng.index(kinds.size());
      const double s = rng.uniform(spec.min_size, spec.max_size);
      const double aspect = rng.uniform(1.0 - spec.aspect_jitter, 1.0 + spec.aspect_jitter);
      const double w = std::min(s * std::sqrt(aspect), size - 1.0);
      const double h = std::min(s / std::sqrt(aspect), size - 1.0);
      const double x0 = rng.uniform(0.0, size - w);
      const double y0 = rng.uniform(0.0, size - h);
      const Box frame{x0, y0, x0 + w, y0 + h};
      const Box padded{frame.x1 - 2, frame.y1 - 2, frame.x2 + 2, frame.y2 + 2};
      const bool overlaps = std::any_of(placed.begin(), placed.end(),
                                        [&](const Box& b) { return iou(b, padded) > 0.0; });
      double hue = 0.0;
      if (spec.color_mode == "class") {
        hue = static_cast<double>(cls) / kinds.size() + rng.uniform(-spec.color_jitter, spec.color_jitter);
      } else {
        hue = rng.uniform();
      }
      const auto color = hsv_to_rgb(hue, rng.uniform(0.55, 1.0), rng.uniform(0.75, 1.0));
      if (overlaps) continue;

      // Rasterize by pixel centres; GT is the tight box of covered pixels.
      int minx = size, miny = size, maxx = -1, maxy = -1;
      const int idx = static_cast<int>(colors.size());
      std::vector<size_t> covered;
      for (int y = static_cast<int>(std::floor(y0)); y <= static_cast<int>(std::ceil(y0 + h)) && y < size; ++y) {
        for (int x = static_cast<int>(std::floor(x0)); x <= static_cast<int>(std::ceil(x0 + w)) && x < size; ++x) {
          if (x < 0 || y < 0) continue;
          const double u = 2.0 * (x + 0.5 - x0) / w - 1.0;
          const double v = 2.0 * (y + 0.5 - y0) / h - 1.0;
          if (!inside_shape(kinds[cls], u, v)) continue;
          covered.push_back(static_cast<size_t>(y) * size + x);
          minx = std::min(minx, x); maxx = std::max(maxx, x);
          miny = std::min(miny, y); maxy = std::max(maxy, y);
        }
      }
      if (maxx < minx || maxx - minx < 2 || maxy - miny < 2) continue;
      for (size_t p : covered) owner[p] = idx;
      colors.push_back(color);
      placed.push_back(padded);
      rec.annotations.push_back({ann_id++, split.categories[cls].id,
                                 Box{static_cast<double>(minx), static_cast<double>(miny),
                                     static_cast<double>(maxx + 1), static_cast<double>(maxy + 1)}});
      ++k;
    }

    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const int o = owner[static_cast<size_t>(y) * size + x];
        for (int c = 0; c < 3; ++c) {
          const double base = o >= 0 ? colors[o][c] : bg + bg_tint[c];
          const double noise = spec.noise > 0 ? spec.noise * rng.normal() : 0.0;
          img.at(x, y, c) = clamp8(base + noise);
        }
      }
    }
    split.records.push_back(std::move(rec));
    out.images.push_back(std::move(img));
  }
  return out;
}

std::filesystem::path write_shapes_dataset(const ShapesDataset& data,
                                           const std::filesystem::path& dir,
                                           const std::string& annotation_name) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw DataError("cannot create " + (dir / "images").string() + ": " + ec.message());
  for (size_t i = 0; i < data.images.size(); ++i) {
    write_png(data.images[i], dir / data.split.records[i].file_name);
  }
  const auto path = dir / annotation_name;
  write_coco_annotations(data.split, path);
  return path;
}

namespace {

std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::vector<std::string> comma_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = strip(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const double v = std::stod(value, &used);
    if (used == value.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw UsageError("shapes: " + key + " expects a number, got '" + value + "'");
}

int parse_int(const std::string& key, const std::string& value) {
  const double v = parse_real(key, value);
  if (v != std::floor(v) || std::abs(v) > 1e9) {
    throw UsageError("shapes: " + key + " expects an integer, got '" + value + "'");
  }
  return static_cast<int>(v);
}

}  // namespace

void ShapesSpec::set(const std::string& key, const std::string& raw) {
  const std::string value = strip(raw);
  const std::string prefix = "shapes.";
  const std::string field = key.rfind(prefix, 0) == 0 ? key.substr(prefix.size()) : "";
  if (field == "classes") {
    classes = comma_list(value);
  } else if (field == "novel_classes") {
    novel_classes = comma_list(value);
  } else if (field == "num_images") {
    num_images = parse_int(key, value);
  } else if (field == "image_size") {
    image_size = parse_int(key, value);
  } else if (field == "min_instances") {
    min_instances = parse_int(key, value);
  } else if (field == "max_instances") {
    max_instances = parse_int(key, value);
  } else if (field == "min_size") {
    min_size = parse_real(key, value);
  } else if (field == "max_size") {
    max_size = parse_real(key, value);
  } else if (field == "aspect_jitter") {
    aspect_jitter = parse_real(key, value);
  } else if (field == "color_mode") {
    color_mode = value;
  } else if (field == "color_jitter") {
    color_jitter = parse_real(key, value);
  } else if (field == "noise") {
    noise = parse_real(key, value);
  } else if (field == "first_image_id") {
    first_image_id = parse_int(key, value);
  } else {
    throw UsageError("unknown shapes key: " + key);
  }
}

std::vector<SupportFolder> read_support_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw DataError("support directory not found: " + dir.string());
  std::vector<fs::path> subdirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) subdirs.push_back(entry.path());
  }
  std::sort(subdirs.begin(), subdirs.end());
  std::vector<SupportFolder> out;
  for (const auto& sub : subdirs) {
    const std::string base = sub.filename().string();
    SupportFolder folder;
    const auto us = base.find('_');
    try {
      size_t used = 0;
      folder.category = std::stoi(base.substr(0, us), &used);
      if (used != base.substr(0, us).size()) throw std::invalid_argument(base);
    } catch (const std::exception&) {
      throw DataError("support folder name must start with a category id: " + sub.string());
    }
    folder.name = us == std::string::npos ? base : base.substr(us + 1);
    std::ifstream in(sub / "boxes.txt");
    if (!in) throw DataError("missing boxes.txt in " + sub.string());
    std::map<std::string, Image> loaded;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = strip(line);
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string file;
      double x, y, w, h;
      if (!(ls >> file >> x >> y >> w >> h)) {
        throw DataError((sub / "boxes.txt").string() + ":" + std::to_string(lineno) +
                        ": expected 'file x y w h'");
      }
      auto it = loaded.find(file);
      if (it == loaded.end()) it = loaded.emplace(file, read_image(sub / file)).first;
      const Box box = Box::from_xywh(x, y, w, h);
      if (!box.valid() || box.x2 > it->second.width + 1e-9 || box.y2 > it->second.height + 1e-9 ||
          box.x1 < 0 || box.y1 < 0) {
        throw DataError((sub / "boxes.txt").string() + ":" + std::to_string(lineno) +
                        ": box is empty or outside the image");
      }
      folder.examples.push_back({file, it->second, box});
    }
    if (folder.examples.empty()) throw DataError("no support instances in " + sub.string());
    out.push_back(std::move(folder));
  }
  if (out.empty()) throw DataError("support directory has no category folders: " + dir.string());
  return out;
}

void write_support_dir(const DatasetSplit& source, std::span<const SupportSet> sets,
                       ImageStore& images, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  for (const auto& set : sets) {
    std::string name = source.category_name(set.category);
    const fs::path sub = dir / (std::to_string(set.category) + (name.empty() ? "" : "_" + name));
    std::error_code ec;
    fs::create_directories(sub, ec);
    if (ec) throw DataError("cannot create " + sub.string() + ": " + ec.message());
    std::ofstream boxes(sub / "boxes.txt");
    if (!boxes) throw DataError("cannot write " + (sub / "boxes.txt").string());
    boxes.precision(17);
    std::set<int64_t> written;
    for (const auto& item : set.items) {
      const ImageRecord* rec = source.find(item.image_id);
      if (!rec) throw DataError("support image " + std::to_string(item.image_id) + " not found");
      const std::string file = fs::path(rec->file_name).filename().string();
      if (written.insert(item.image_id).second) write_png(images.get(*rec), sub / file);
      boxes << file << " " << item.box.x1 << " " << item.box.y1 << " " << item.box.width() << " "
            << item.box.height() << "\n";
    }
  }
}

}  // namespace irfsod
