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
#include "irfsod/config.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "irfsod/errors.h"

namespace irfsod {

const char* to_string(ClassifierChoice c) {
  switch (c) {
    case ClassifierChoice::kDynamic: return "dynamic";
    case ClassifierChoice::kComparison: return "comparison";
    case ClassifierChoice::kDistance: return "distance";
    case ClassifierChoice::kMulti: return "multi";
  }
  return "unknown";
}

const char* to_string(RegressorKind k) {
  return k == RegressorKind::kSemiExplicit ? "semi_explicit" : "plain";
}

ClassifierHead AblationConfig::train_head() const {
  switch (classifier) {
    case ClassifierChoice::kDistance: return ClassifierHead::kDistance;
    case ClassifierChoice::kMulti: return ClassifierHead::kMulti;
    default: return ClassifierHead::kComparison;
  }
}

ClassifierHead AblationConfig::infer_head() const {
  switch (classifier) {
    case ClassifierChoice::kComparison: return ClassifierHead::kComparison;
    case ClassifierChoice::kMulti: return ClassifierHead::kMulti;
    default: return ClassifierHead::kDistance;
  }
}

TrainConfig TrainConfig::full_scale() {
  TrainConfig t;
  t.iterations = 120000;
  t.learning_rate = 0.003;
  t.milestones = {80000, 110000};
  t.gamma = 0.1;
  t.batch_size = 9;
  return t;
}

double TrainConfig::lr_at(int iteration) const {
  double lr = learning_rate;
  for (int m : milestones) {
    if (iteration >= m) lr *= gamma;
  }
  if (warmup_iterations > 0 && iteration < warmup_iterations) {
    lr *= static_cast<double>(iteration + 1) / warmup_iterations;
  }
  return lr;
}

void TrainConfig::validate() const {
  if (iterations < 0) throw UsageError("train.iterations must be >= 0");
  if (!(learning_rate > 0.0)) throw UsageError("train.lr must be positive");
  if (!(gamma > 0.0)) throw UsageError("train.gamma must be positive");
  if (batch_size < 1) throw UsageError("train.batch_size must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw UsageError("train.momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw UsageError("train.weight_decay must be >= 0");
  if (shots < 1) throw UsageError("train.shots must be >= 1");
  if (!(clip_grad_norm >= 0.0)) throw UsageError("train.clip_grad_norm must be >= 0");
  for (int m : milestones) {
    if (m <= 0) throw UsageError("train.milestones must be positive");
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw UsageError("invalid value '" + value + "' for config key " + key);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(d)) bad_value(key, v);
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v);
  }
}

int64_t parse_int(const std::string& key, const std::string& v) {
  int64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) bad_value(key, v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  bad_value(key, v);
}

// Shortest text that parses back to the same double.
std::string fmt_double(double d) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), d);
  return std::string(buf, res.ptr);
}

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt_double(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& s : split_list(v)) out.push_back(parse_double(key, s));
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& s : split_list(v)) out.push_back(static_cast<int>(parse_int(key, s)));
  return out;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define IRFSOD_DOUBLE(path) \
  Field{[](const RunConfig& c) { return fmt_double(c.path); }, \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.path = parse_double(k, v); }}
#define IRFSOD_INT(path) \
  Field{[](const RunConfig& c) { return std::to_string(c.path); }, \
        [](RunConfig& c, const std::string& k, const std::string& v) { \
          c.path = static_cast<decltype(c.path)>(parse_int(k, v)); }}
#define IRFSOD_BOOL(path) \
  Field{[](const RunConfig& c) { return std::string(c.path ? "true" : "false"); }, \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.path = parse_bool(k, v); }}
#define IRFSOD_STRING(path) \
  Field{[](const RunConfig& c) { return c.path; }, \
        [](RunConfig& c, const std::string&, const std::string& v) { c.path = v; }}
#define IRFSOD_DOUBLES(path) \
  Field{[](const RunConfig& c) { return fmt_list(c.path); }, \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.path = parse_double_list(k, v); }}
#define IRFSOD_INTS(path) \
  Field{[](const RunConfig& c) { return fmt_list(c.path); }, \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.path = parse_int_list(k, v); }}

const std::vector<std::pair<std::string, Field>>& registry() {
  static const std::vector<std::pair<std::string, Field>> fields = {
      {"data.train_annotations", IRFSOD_STRING(data.train_annotations)},
      {"data.test_annotations", IRFSOD_STRING(data.test_annotations)},
      {"data.split", IRFSOD_STRING(data.split)},
      {"data.base_categories", IRFSOD_INTS(data.base_categories)},
      {"backbone.channels", IRFSOD_INTS(backbone.channels)},
      {"backbone.strides", IRFSOD_INTS(backbone.strides)},
      {"backbone.kernel", IRFSOD_INT(backbone.kernel)},
      {"backbone.final_relu", IRFSOD_BOOL(backbone.final_relu)},
      {"rpn.tau", IRFSOD_DOUBLE(rpn.tau)},
      {"rpn.neg_iou", IRFSOD_DOUBLE(rpn.neg_iou)},
      {"rpn.pos_iou", IRFSOD_DOUBLE(rpn.pos_iou)},
      {"rpn.caps",
       Field{[](const RunConfig& c) {
               return fmt_list(std::vector<int>{c.rpn.caps.positive, c.rpn.caps.negative,
                                                c.rpn.caps.pseudo_positive});
             },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               const auto caps = parse_int_list(k, v);
               if (caps.size() != 3) bad_value(k, v);
               c.rpn.caps = {caps[0], caps[1], caps[2]};
             }}},
      {"rpn.scales", IRFSOD_DOUBLES(rpn.scales)},
      {"rpn.ratios", IRFSOD_DOUBLES(rpn.ratios)},
      {"rpn.hidden_channels", IRFSOD_INT(rpn.hidden_channels)},
      {"rpn.pre_nms_top_n", IRFSOD_INT(rpn.pre_nms_top_n)},
      {"rpn.post_nms_top_n", IRFSOD_INT(rpn.post_nms_top_n)},
      {"rpn.nms_threshold", IRFSOD_DOUBLE(rpn.nms_threshold)},
      {"rpn.min_box_size", IRFSOD_DOUBLE(rpn.min_box_size)},
      {"heads.alpha", IRFSOD_DOUBLE(heads.alpha)},
      {"heads.lambda", IRFSOD_DOUBLE(heads.lambda)},
      {"heads.score_threshold", IRFSOD_DOUBLE(heads.score_threshold)},
      {"heads.roi_pos_iou", IRFSOD_DOUBLE(heads.roi_pos_iou)},
      {"heads.roi_resolution", IRFSOD_INT(heads.roi_resolution)},
      {"heads.comparison_hidden", IRFSOD_INT(heads.comparison_hidden)},
      {"heads.regressor_hidden", IRFSOD_INT(heads.regressor_hidden)},
      {"heads.detection_nms", IRFSOD_DOUBLE(heads.detection_nms)},
      {"heads.max_detections", IRFSOD_INT(heads.max_detections)},
      {"heads.roi_samples", IRFSOD_INT(heads.roi_samples)},
      {"heads.roi_fg_fraction", IRFSOD_DOUBLE(heads.roi_fg_fraction)},
      {"train.iterations", IRFSOD_INT(train.iterations)},
      {"train.lr", IRFSOD_DOUBLE(train.learning_rate)},
      {"train.milestones", IRFSOD_INTS(train.milestones)},
      {"train.gamma", IRFSOD_DOUBLE(train.gamma)},
      {"train.batch_size", IRFSOD_INT(train.batch_size)},
      {"train.momentum", IRFSOD_DOUBLE(train.momentum)},
      {"train.weight_decay", IRFSOD_DOUBLE(train.weight_decay)},
      {"train.seed", IRFSOD_INT(train.seed)},
      {"train.shots", IRFSOD_INT(train.shots)},
      {"train.warmup_iterations", IRFSOD_INT(train.warmup_iterations)},
      {"train.support_grad", IRFSOD_BOOL(train.support_grad)},
      {"train.clip_grad_norm", IRFSOD_DOUBLE(train.clip_grad_norm)},
      {"ablation.ss_rpn", IRFSOD_BOOL(ablation.ss_rpn)},
      {"ablation.pixel_contrast", IRFSOD_BOOL(ablation.pixel_contrast)},
      {"ablation.regressor",
       Field{[](const RunConfig& c) { return std::string(to_string(c.ablation.regressor)); },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               if (v == "semi_explicit") c.ablation.regressor = RegressorKind::kSemiExplicit;
               else if (v == "plain") c.ablation.regressor = RegressorKind::kPlain;
               else bad_value(k, v);
             }}},
      {"ablation.classifier",
       Field{[](const RunConfig& c) { return std::string(to_string(c.ablation.classifier)); },
             [](RunConfig& c, const std::string& k, const std::string& v) {
               static const std::map<std::string, ClassifierChoice> names = {
                   {"dynamic", ClassifierChoice::kDynamic},
                   {"comparison", ClassifierChoice::kComparison},
                   {"distance", ClassifierChoice::kDistance},
                   {"multi", ClassifierChoice::kMulti}};
               auto it = names.find(v);
               if (it == names.end()) bad_value(k, v);
               c.ablation.classifier = it->second;
             }}},
  };
  return fields;
}

#undef IRFSOD_DOUBLE
#undef IRFSOD_INT
#undef IRFSOD_BOOL
#undef IRFSOD_STRING
#undef IRFSOD_DOUBLES
#undef IRFSOD_INTS

const Field& lookup(const std::string& key) {
  for (const auto& [k, f] : registry()) {
    if (k == key) return f;
  }
  throw UsageError("unknown config key: " + key);
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [k, f] : registry()) out.push_back(k);
    return out;
  }();
  return names;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  lookup(key).set(*this, key, v);
  if (key == "ablation.pixel_contrast" && !ablation.pixel_contrast) {
    if (explicit_keys_.count("heads.alpha") && heads.alpha != 1.0) {
      throw UsageError("ablation.pixel_contrast=false conflicts with heads.alpha=" + fmt_double(heads.alpha));
    }
    heads.alpha = 1.0;
  }
  if (key == "heads.alpha" && !ablation.pixel_contrast && heads.alpha != 1.0) {
    throw UsageError("heads.alpha must be 1 when ablation.pixel_contrast=false");
  }
  explicit_keys_.insert(key);
}

std::string RunConfig::get(const std::string& key) const { return lookup(key).get(*this); }

std::vector<std::pair<std::string, std::string>> RunConfig::to_pairs() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [k, f] : registry()) out.emplace_back(k, f.get(*this));
  return out;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_pairs()) out += k + " = " + v + "\n";
  return out;
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(lineno) + " is not 'key = value': " + line);
    }
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

void RunConfig::apply_overrides(const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw UsageError("override must be key=value: " + o);
    set(trim(o.substr(0, eq)), o.substr(eq + 1));
  }
}

void RunConfig::validate() const {
  backbone.validate();
  rpn.validate();
  heads.validate();
  train.validate();
  if (!ablation.pixel_contrast && heads.alpha != 1.0) {
    throw UsageError("heads.alpha must be 1 when ablation.pixel_contrast=false");
  }
  if (data.split != "metadata" && data.split != "coco_voc20") {
    throw UsageError("data.split must be 'metadata' or 'coco_voc20'");
  }
}

}  // namespace irfsod
