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
//
// Python bindings for the detector: configuration, synthetic data, training,
// instant-response detection, evaluation, and the scoring primitives.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "irfsod/data.h"
#include "irfsod/errors.h"
#include "irfsod/eval.h"
#include "irfsod/geometry.h"
#include "irfsod/heads.h"
#include "irfsod/training.h"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace irfsod;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

SplitSpec resolve_split(const DataConfig& data, const fs::path& annotations) {
  if (data.split == "coco_voc20") return coco_voc20_split();
  return split_from_metadata(annotations);
}

RegionFeature region_from(const Array& a) {
  if (a.ndim() != 3 || a.shape(1) != a.shape(2)) {
    throw UsageError("region features must have shape (depth, r, r)");
  }
  Tensor t({static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))});
  std::copy(a.data(), a.data() + a.size(), t.values().begin());
  return RegionFeature::from_pooled(std::move(t));
}

SupportFeature support_from(const Array& a) {
  SupportFeature s;
  s.proto = region_from(a);
  s.shots = 1;
  return s;
}

Image image_from(const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw UsageError("images must be uint8 arrays of shape (h, w, 3)");
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::memcpy(img.pixels.data(), a.data(), img.pixels.size());
  return img;
}

Box box_from(const std::vector<double>& v) {
  if (v.size() != 4) throw UsageError("boxes are [x1, y1, x2, y2]");
  return {v[0], v[1], v[2], v[3]};
}

py::list detections_to_py(const std::vector<Detection>& dets) {
  py::list out;
  for (const auto& d : dets) {
    py::dict item;
    item["box"] = std::vector<double>{d.box.x1, d.box.y1, d.box.x2, d.box.y2};
    item["category"] = d.category;
    item["score"] = d.score;
    out.append(item);
  }
  return out;
}

// Same layout as the metrics JSON written by the command-line tool.
py::dict metrics_to_py(const EvalResult& r) {
  py::dict metrics;
  for (size_t i = 0; i < kNumMetrics; ++i) metrics[py::str(std::string(kMetricNames[i]))] = r.metrics[i];
  py::dict out;
  out["metrics"] = metrics;
  if (r.ci_half_width) {
    py::dict ci;
    for (size_t i = 0; i < kNumMetrics; ++i) ci[py::str(std::string(kMetricNames[i]))] = (*r.ci_half_width)[i];
    out["ci95_half_width"] = ci;
  } else {
    out["ci95_half_width"] = py::none();
  }
  out["episodes"] = r.episodes;
  out["seconds_per_episode"] = r.seconds_per_episode;
  return out;
}

RunConfig config_from(const py::object& config, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (py::isinstance<RunConfig>(config)) {
    cfg = config.cast<RunConfig>();
  } else if (!config.is_none()) {
    cfg = RunConfig::from_file(config.cast<fs::path>());
  }
  cfg.apply_overrides(overrides);
  return cfg;
}

Detector train_model(const py::object& config, const std::vector<std::string>& overrides,
                     const std::optional<fs::path>& out, const py::object& on_log) {
  RunConfig cfg = config_from(config, overrides);
  if (cfg.data.train_annotations.empty()) throw UsageError("data.train_annotations is not set");
  const SplitSpec split = resolve_split(cfg.data, cfg.data.train_annotations);
  const DatasetSplit base = load_coco_annotations(cfg.data.train_annotations, split, SplitRole::kBase);
  if (cfg.data.base_categories.empty()) {
    cfg.data.base_categories = split.base;
    std::sort(cfg.data.base_categories.begin(), cfg.data.base_categories.end());
  }
  cfg.validate();
  Detector model(cfg);
  model.init(cfg.train.seed);
  ImageStore images(base.image_root);
  {
    py::gil_scoped_release release;
    train(model, base, images, [&](const TrainLogRecord& rec) {
      if (on_log.is_none()) return;
      py::gil_scoped_acquire acquire;
      on_log(format_log_record(rec));
    });
  }
  if (out) save_checkpoint(model, *out);
  return model;
}

py::dict evaluate_model(const Detector& model, const std::string& protocol,
                        const std::optional<fs::path>& supports, int ways, int shots,
                        int episodes, int queries, uint64_t seed) {
  if (protocol != "onetime" && protocol != "meta") {
    throw UsageError("unknown protocol '" + protocol + "' (expected onetime or meta)");
  }
  const RunConfig& cfg = model.config();
  if (cfg.data.test_annotations.empty()) throw UsageError("data.test_annotations is not set");
  const SplitSpec split = resolve_split(cfg.data, cfg.data.test_annotations);
  const DatasetSplit test = load_coco_annotations(cfg.data.test_annotations, split, SplitRole::kNovel);
  ImageStore test_images(test.image_root);
  const bool need_pool = protocol == "meta" || !supports;
  if (need_pool && cfg.data.train_annotations.empty()) {
    throw UsageError("data.train_annotations is not set");
  }
  DatasetSplit pool;
  if (need_pool) pool = load_coco_annotations(cfg.data.train_annotations, split, SplitRole::kNovel);
  ImageStore pool_images(pool.image_root);

  py::gil_scoped_release release;
  EvalResult result;
  if (protocol == "onetime") {
    std::vector<SupportFeature> protos;
    if (supports) {
      protos = encode_support_folders(model, read_support_dir(*supports));
    } else {
      Rng rng(seed);
      const auto sets = sample_support_sets(pool, split.novel, shots, rng);
      protos = encode_supports(model, sets, pool, pool_images);
    }
    result = one_time_protocol(model, protos, test, test_images);
  } else {
    const MetaTestOptions opt{ways, shots, episodes, queries, seed};
    result = meta_testing(model, pool, test, pool_images, test_images, opt).summary;
  }
  py::gil_scoped_acquire acquire;
  return metrics_to_py(result);
}

// Prototypes of a support directory, reusable across detect calls.
struct Supports {
  std::vector<SupportFeature> protos;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Instant-response few-shot object detection";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<RunConfig>(m, "Config")
      .def(py::init<>())
      .def_static("from_file", &RunConfig::from_file, py::arg("path"))
      .def_static("from_text", &RunConfig::from_text, py::arg("text"))
      .def("set", &RunConfig::set, py::arg("key"), py::arg("value"))
      .def("get", &RunConfig::get, py::arg("key"))
      .def("validate", &RunConfig::validate)
      .def("to_text", &RunConfig::to_text)
      .def("to_dict", [](const RunConfig& c) {
        py::dict d;
        for (const auto& [k, v] : c.to_pairs()) d[py::str(k)] = v;
        return d;
      })
      .def_static("keys", &RunConfig::keys);

  py::class_<Supports>(m, "Supports")
      .def_property_readonly("categories", [](const Supports& s) {
        std::vector<int> out;
        for (const auto& p : s.protos) out.push_back(p.category);
        return out;
      })
      .def("__len__", [](const Supports& s) { return s.protos.size(); });

  py::class_<Detector>(m, "Detector")
      .def(py::init([](const py::object& config, uint64_t seed) {
             Detector d(config_from(config, {}));
             d.init(seed);
             return d;
           }),
           py::arg("config") = py::none(), py::arg("seed") = 0)
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("save", [](const Detector& d, const fs::path& p) { save_checkpoint(d, p); }, py::arg("path"))
      .def_property_readonly("config", [](const Detector& d) { return d.config(); })
      .def("set_inference", [](Detector& d, const std::string& key, const std::string& value) {
             RunConfig& c = d.mutable_config();
             c.forget_explicit_keys();
             c.set(key, value);
             c.validate();
           },
           py::arg("key"), py::arg("value"), "Changes an inference-time setting.")
      .def("parameter_hash", &Detector::parameter_hash)
      .def("encode_supports", [](const Detector& d, const fs::path& dir) {
             return Supports{encode_support_folders(d, read_support_dir(dir))};
           },
           py::arg("directory"))
      .def("detect",
           [](const Detector& d, const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& image,
              const Supports& s) {
             const Image img = image_from(image);
             std::vector<Detection> dets;
             {
               py::gil_scoped_release release;
               dets = detect(d, img, s.protos);
             }
             return detections_to_py(dets);
           },
           py::arg("image"), py::arg("supports"))
      .def("evaluate", &evaluate_model, py::arg("protocol") = "onetime",
           py::arg("supports") = std::nullopt, py::arg("ways") = 2, py::arg("shots") = 10,
           py::arg("episodes") = 1000, py::arg("queries") = 10, py::arg("seed") = 0);

  m.def("train", &train_model, py::arg("config"), py::arg("overrides") = std::vector<std::string>{},
        py::arg("out") = std::nullopt, py::arg("on_log") = py::none(),
        "Base-trains a detector; `on_log` receives one JSON line per iteration.");

  m.def("read_image", [](const fs::path& path) {
    const Image img = read_image(path);
    py::array_t<uint8_t> out({img.height, img.width, Image::kChannels});
    std::memcpy(out.mutable_data(), img.pixels.data(), img.pixels.size());
    return out;
  }, py::arg("path"));

  m.def("make_shapes",
        [](const fs::path& out, uint64_t seed, int test_images, int support_shots,
           const std::map<std::string, std::string>& spec_overrides) {
          ShapesSpec spec;
          for (const auto& [k, v] : spec_overrides) spec.set(k, v);
          spec.validate();
          const ShapesDataset train = generate_shapes_dataset(spec, seed);
          write_shapes_dataset(train, out, "train.json");
          if (test_images > 0) {
            ShapesSpec test_spec = spec;
            test_spec.num_images = test_images;
            test_spec.first_image_id = spec.first_image_id + spec.num_images;
            write_shapes_dataset(generate_shapes_dataset(test_spec, Rng::derive(seed, 1).next()), out,
                                 "test.json");
          }
          if (support_shots > 0) {
            const DatasetSplit novel = filter_role(train.split, SplitRole::kNovel);
            ImageStore store;
            for (size_t i = 0; i < train.images.size(); ++i) store.put(train.split.records[i].id, train.images[i]);
            Rng rng = Rng::derive(seed, 2);
            write_support_dir(novel, sample_support_sets(novel, novel.novel_categories, support_shots, rng),
                              store, out / "supports");
          }
        },
        py::arg("out"), py::arg("seed") = 0, py::arg("test_images") = 100, py::arg("support_shots") = 10,
        py::arg("spec") = std::map<std::string, std::string>{},
        "Writes the synthetic shapes dataset, same layout as the make-shapes command.");

  m.def("distance_score",
        [](const Array& x, const Array& c, double alpha, double lambda) {
          HeadConfig cfg;
          cfg.alpha = alpha;
          cfg.lambda = lambda;
          cfg.validate();
          return distance_score(region_from(x), support_from(c), cfg);
        },
        py::arg("x"), py::arg("c"), py::arg("alpha") = 0.5, py::arg("lam") = 20.0);

  m.def("distance_matrix", [](const Array& x, const Array& c) {
    const DistanceMatrix dm = distance_matrix(region_from(x), support_from(c));
    Array out({dm.cells, dm.cells});
    std::copy(dm.values.begin(), dm.values.end(), out.mutable_data());
    return out;
  }, py::arg("x"), py::arg("c"));

  m.def("iou", [](const std::vector<double>& a, const std::vector<double>& b) {
    return iou(box_from(a), box_from(b));
  }, py::arg("a"), py::arg("b"));

  m.def("nms",
        [](const std::vector<std::vector<double>>& boxes, const std::vector<double>& scores,
           const std::vector<int>& categories, double threshold) {
          if (boxes.size() != scores.size() || boxes.size() != categories.size()) {
            throw UsageError("boxes, scores and categories must have equal length");
          }
          std::vector<Detection> dets;
          for (size_t i = 0; i < boxes.size(); ++i) dets.push_back({box_from(boxes[i]), categories[i], scores[i]});
          return detections_to_py(nms(dets, threshold));
        },
        py::arg("boxes"), py::arg("scores"), py::arg("categories"), py::arg("threshold") = 0.5);

  m.def("compute_ap",
        [](const py::list& detections, const py::list& ground_truth) {
          std::vector<ImageDetection> dets;
          for (const auto& h : detections) {
            const auto d = h.cast<py::dict>();
            dets.push_back({d["image_id"].cast<int64_t>(),
                            Detection{box_from(d["box"].cast<std::vector<double>>()),
                                      d["category"].cast<int>(), d["score"].cast<double>()}});
          }
          std::vector<GroundTruth> gts;
          for (const auto& h : ground_truth) {
            const auto g = h.cast<py::dict>();
            gts.push_back({g["image_id"].cast<int64_t>(), g["category"].cast<int>(),
                           box_from(g["box"].cast<std::vector<double>>())});
          }
          return metrics_to_py(compute_ap(dets, gts));
        },
        py::arg("detections"), py::arg("ground_truth"),
        "COCO-style AP/AR; items are dicts with image_id, category, box (and score).");
}
