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
#include "irfsod/eval.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "irfsod/errors.h"

namespace irfsod {

double EvalResult::metric(std::string_view name) const {
  for (size_t i = 0; i < kNumMetrics; ++i) {
    if (kMetricNames[i] == name) return metrics[i];
  }
  throw UsageError("unknown metric " + std::string(name));
}

// ---------------------------------------------------------------------------
// COCO-style AP/AR

namespace {

struct AreaRange {
  double lo, hi;
};
constexpr AreaRange kAreas[4] = {
    {0.0, 1e10}, {0.0, 32.0 * 32.0}, {32.0 * 32.0, 96.0 * 96.0}, {96.0 * 96.0, 1e10}};
constexpr int kRecallPoints = 101;

bool outside(double area, const AreaRange& r) { return area < r.lo || area > r.hi; }

// Matching outcome of one (image, category) cell for one area range and
// max-detection limit: per threshold, which detections matched.
struct CellEval {
  std::vector<double> scores;                // sorted desc, truncated to max_det
  std::vector<std::vector<char>> matched;    // [threshold][det]
  std::vector<std::vector<char>> ignored;    // [threshold][det]
  int gt_count = 0;                          // non-ignored GT
};

CellEval evaluate_cell(const std::vector<const Detection*>& dets,
                       const std::vector<const GroundTruth*>& gts, const AreaRange& range,
                       int max_det, std::span<const double> thresholds) {
  CellEval out;
  // Non-ignored GT first, stable.
  std::vector<const GroundTruth*> g(gts);
  std::vector<char> g_ignore;
  std::stable_sort(g.begin(), g.end(), [&](const GroundTruth* a, const GroundTruth* b) {
    return !outside(a->box.area(), range) && outside(b->box.area(), range);
  });
  for (const auto* x : g) {
    const bool ig = outside(x->box.area(), range);
    g_ignore.push_back(ig);
    out.gt_count += ig ? 0 : 1;
  }
  std::vector<const Detection*> d(dets);
  std::stable_sort(d.begin(), d.end(),
                   [](const Detection* a, const Detection* b) { return a->score > b->score; });
  if (static_cast<int>(d.size()) > max_det) d.resize(max_det);
  for (const auto* x : d) out.scores.push_back(x->score);

  const size_t nt = thresholds.size();
  out.matched.assign(nt, std::vector<char>(d.size(), 0));
  out.ignored.assign(nt, std::vector<char>(d.size(), 0));
  for (size_t t = 0; t < nt; ++t) {
    std::vector<char> gt_used(g.size(), 0);
    for (size_t di = 0; di < d.size(); ++di) {
      double best = std::min(thresholds[t], 1.0 - 1e-10);
      int m = -1;
      for (size_t gi = 0; gi < g.size(); ++gi) {
        if (gt_used[gi]) continue;
        // Once matched to a regular GT, stop at the ignored tail.
        if (m > -1 && !g_ignore[m] && g_ignore[gi]) break;
        const double o = iou(d[di]->box, g[gi]->box);
        if (o < best) continue;
        best = o;
        m = static_cast<int>(gi);
      }
      if (m == -1) {
        out.ignored[t][di] = outside(d[di]->box.area(), range);
        continue;
      }
      gt_used[m] = 1;
      out.matched[t][di] = 1;
      out.ignored[t][di] = g_ignore[m];
    }
  }
  return out;
}

}  // namespace

EvalResult compute_ap(std::span<const ImageDetection> detections,
                      std::span<const GroundTruth> gts, const ApParams& params) {
  std::vector<double> thr = params.iou_thresholds;
  if (thr.empty()) {
    for (int i = 0; i < 10; ++i) thr.push_back(0.5 + 0.05 * i);
  }
  const auto& max_dets = params.max_dets;

  using Key = std::pair<int64_t, int>;
  std::map<Key, std::vector<const Detection*>> det_cells;
  std::map<Key, std::vector<const GroundTruth*>> gt_cells;
  std::set<int> categories;
  std::set<int64_t> image_ids;
  for (const auto& g : gts) {
    gt_cells[{g.image_id, g.category}].push_back(&g);
    categories.insert(g.category);
    image_ids.insert(g.image_id);
  }
  for (const auto& d : detections) {
    det_cells[{d.image_id, d.det.category}].push_back(&d.det);
    image_ids.insert(d.image_id);
  }

  // precision[t][cat][area][maxdet] and recall[t][cat][area][maxdet]; -1 = undefined.
  const size_t nt = thr.size();
  const size_t nc = categories.size();
  auto idx = [&](size_t t, size_t c, size_t a, size_t m) {
    return ((t * nc + c) * 4 + a) * 3 + m;
  };
  std::vector<double> precision(nt * nc * 12, -1.0);
  std::vector<double> recall(nt * nc * 12, -1.0);

  static const std::vector<const Detection*> kNoDets;
  static const std::vector<const GroundTruth*> kNoGts;
  size_t ci = 0;
  for (int cat : categories) {
    for (size_t a = 0; a < 4; ++a) {
      for (size_t mi = 0; mi < 3; ++mi) {
        std::vector<CellEval> cells;
        int npig = 0;
        for (int64_t img : image_ids) {
          auto dit = det_cells.find({img, cat});
          auto git = gt_cells.find({img, cat});
          if (dit == det_cells.end() && git == gt_cells.end()) continue;
          cells.push_back(evaluate_cell(dit == det_cells.end() ? kNoDets : dit->second,
                                        git == gt_cells.end() ? kNoGts : git->second, kAreas[a],
                                        max_dets[mi], thr));
          npig += cells.back().gt_count;
        }
        if (npig == 0) continue;
        // Concatenate in image order, then stable sort by score.
        struct Entry {
          double score;
          size_t cell, det;
        };
        std::vector<Entry> all;
        for (size_t c = 0; c < cells.size(); ++c) {
          for (size_t k = 0; k < cells[c].scores.size(); ++k) all.push_back({cells[c].scores[k], c, k});
        }
        std::stable_sort(all.begin(), all.end(),
                         [](const Entry& x, const Entry& y) { return x.score > y.score; });
        for (size_t t = 0; t < nt; ++t) {
          std::vector<double> rc, pr;
          double tp = 0.0, fp = 0.0;
          for (const auto& e : all) {
            if (cells[e.cell].ignored[t][e.det]) continue;
            (cells[e.cell].matched[t][e.det] ? tp : fp) += 1.0;
            rc.push_back(tp / npig);
            pr.push_back(tp / (tp + fp + std::numeric_limits<double>::epsilon()));
          }
          recall[idx(t, ci, a, mi)] = rc.empty() ? 0.0 : rc.back();
          for (size_t i = pr.size(); i-- > 1;) pr[i - 1] = std::max(pr[i - 1], pr[i]);
          double sum = 0.0;
          for (int k = 0; k < kRecallPoints; ++k) {
            const double r = k / 100.0;
            const auto pos = std::lower_bound(rc.begin(), rc.end(), r) - rc.begin();
            if (pos < static_cast<std::ptrdiff_t>(pr.size())) sum += pr[pos];
          }
          precision[idx(t, ci, a, mi)] = sum / kRecallPoints;
        }
      }
    }
    ++ci;
  }

  auto mean_of = [&](const std::vector<double>& v, std::optional<size_t> t_only, size_t a,
                     size_t mi) {
    double s = 0.0;
    int n = 0;
    for (size_t t = 0; t < nt; ++t) {
      if (t_only && t != *t_only) continue;
      for (size_t c = 0; c < nc; ++c) {
        const double x = v[idx(t, c, a, mi)];
        if (x > -1.0) {
          s += x;
          ++n;
        }
      }
    }
    return n ? s / n : 0.0;
  };
  auto thr_index = [&](double value) -> std::optional<size_t> {
    for (size_t t = 0; t < nt; ++t) {
      if (std::abs(thr[t] - value) < 1e-9) return t;
    }
    return std::nullopt;
  };
  auto at_thr = [&](double value, size_t a) {
    const auto t = thr_index(value);
    return t ? mean_of(precision, t, a, 2) : 0.0;
  };

  EvalResult r;
  r.metrics = {mean_of(precision, std::nullopt, 0, 2),
               at_thr(0.5, 0),
               at_thr(0.75, 0),
               mean_of(precision, std::nullopt, 1, 2),
               mean_of(precision, std::nullopt, 2, 2),
               mean_of(precision, std::nullopt, 3, 2),
               mean_of(recall, std::nullopt, 0, 0),
               mean_of(recall, std::nullopt, 0, 1),
               mean_of(recall, std::nullopt, 0, 2),
               mean_of(recall, std::nullopt, 1, 2),
               mean_of(recall, std::nullopt, 2, 2),
               mean_of(recall, std::nullopt, 3, 2)};
  return r;
}

// ---------------------------------------------------------------------------
// Inference

std::vector<SupportFeature> encode_supports(const Detector& model,
                                            std::span<const SupportSet> sets,
                                            const DatasetSplit& source, ImageStore& images) {
  const int r = model.config().heads.roi_resolution;
  std::map<int64_t, FeatureMap> maps;
  std::vector<SupportFeature> out;
  for (const auto& set : sets) {
    if (set.items.empty()) throw UsageError("support set for category " +
                                            std::to_string(set.category) + " is empty");
    std::vector<RegionFeature> inst;
    for (const auto& item : set.items) {
      auto it = maps.find(item.image_id);
      if (it == maps.end()) {
        const ImageRecord* rec = source.find(item.image_id);
        if (!rec) throw DataError("support image " + std::to_string(item.image_id) + " not found");
        it = maps.emplace(item.image_id, model.backbone.forward(images.get(*rec))).first;
      }
      inst.push_back(roi_extract(it->second, item.box, r));
    }
    out.push_back(support_prototype(inst, set.category));
  }
  return out;
}

std::vector<SupportFeature> encode_support_folders(const Detector& model,
                                                   std::span<const SupportFolder> folders) {
  const int r = model.config().heads.roi_resolution;
  std::vector<SupportFeature> out;
  for (const auto& folder : folders) {
    if (folder.examples.empty()) {
      throw UsageError("support folder for category " + std::to_string(folder.category) +
                       " is empty");
    }
    std::map<std::string, FeatureMap> maps;
    std::vector<RegionFeature> inst;
    for (const auto& ex : folder.examples) {
      auto it = maps.find(ex.file_name);
      if (it == maps.end()) it = maps.emplace(ex.file_name, model.backbone.forward(ex.image)).first;
      inst.push_back(roi_extract(it->second, ex.box, r));
    }
    out.push_back(support_prototype(inst, folder.category));
  }
  return out;
}

std::vector<Detection> detect(const Detector& model, const Image& image,
                              std::span<const SupportFeature> supports) {
  return detect(model, image, supports, model.config().ablation.infer_head());
}

std::vector<Detection> detect(const Detector& model, const Image& image,
                              std::span<const SupportFeature> supports, ClassifierHead head) {
  if (supports.empty()) throw UsageError("detect needs at least one support set");
  const RunConfig& cfg = model.config();
  HeadConfig hc = cfg.heads;
  hc.alpha = cfg.effective_alpha();

  const FeatureMap fm = model.backbone.forward(image);
  const RpnOutput out = model.rpn.forward(fm, nullptr);
  const auto anchors = model.anchors(fm);
  const auto proposals =
      propose(out.objectness, out.deltas, anchors, cfg.rpn, image.width, image.height);

  const auto& multi_cats = model.multi.categories();
  std::vector<Detection> dets;
  for (const auto& p : proposals) {
    const RegionFeature x = roi_extract(fm, p.box, hc.roi_resolution);
    std::vector<double> multi_prob;
    if (head == ClassifierHead::kMulti) multi_prob = model.multi.probabilities(x);
    for (const auto& c : supports) {
      double score = 0.0;
      switch (head) {
        case ClassifierHead::kDistance:
          score = distance_score(x, c, hc);
          break;
        case ClassifierHead::kComparison:
          score = comparison_score(x, c, model.comparison);
          break;
        case ClassifierHead::kMulti: {
          // A fixed-vocabulary head can only name categories it was trained on.
          auto it = std::find(multi_cats.begin(), multi_cats.end(), c.category);
          if (it == multi_cats.end()) continue;
          score = multi_prob[1 + (it - multi_cats.begin())];
          break;
        }
      }
      if (!(score >= hc.score_threshold)) continue;
      const BoxDelta delta = model.regressor.forward(x, c, nullptr);
      const Box box = clip_box(decode_delta(p.box, delta), image.width, image.height);
      if (!box.valid()) continue;
      dets.push_back({box, c.category, score});
    }
  }
  dets = nms(dets, hc.detection_nms);
  if (static_cast<int>(dets.size()) > hc.max_detections) dets.resize(hc.max_detections);
  return dets;
}

std::vector<GroundTruth> ground_truth_of(std::span<const ImageRecord> records,
                                         std::span<const int> categories) {
  std::vector<GroundTruth> out;
  for (const auto& r : records) {
    for (const auto& a : r.annotations) {
      if (std::find(categories.begin(), categories.end(), a.category) != categories.end()) {
        out.push_back({r.id, a.category, a.box});
      }
    }
  }
  return out;
}

EvalResult one_time_protocol(const Detector& model, std::span<const SupportFeature> supports,
                             const DatasetSplit& test, ImageStore& images,
                             std::vector<ImageDetection>* detections_out) {
  std::vector<int> cats;
  for (const auto& s : supports) cats.push_back(s.category);
  for (int c : test.novel_categories) {
    bool present = false;
    for (const auto& r : test.records) present = present || r.has_category(c);
    if (present && std::find(cats.begin(), cats.end(), c) == cats.end()) {
      throw UsageError("no support set for novel category " + std::to_string(c));
    }
  }
  const auto start = std::chrono::steady_clock::now();
  std::vector<ImageDetection> all;
  for (const auto& rec : test.records) {
    for (const auto& d : detect(model, images.get(rec), supports)) all.push_back({rec.id, d});
  }
  EvalResult res = compute_ap(all, ground_truth_of(test.records, cats));
  res.seconds_per_episode =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (detections_out) *detections_out = std::move(all);
  return res;
}

std::optional<double> ci_half_width(std::span<const double> values) {
  const size_t n = values.size();
  if (n < 2) return std::nullopt;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return 1.96 * std::sqrt(ss / (n - 1)) / std::sqrt(static_cast<double>(n));
}

EvalResult summarize(std::span<const EvalResult> results) {
  EvalResult out;
  out.episodes = static_cast<int>(results.size());
  if (results.empty()) return out;
  std::array<double, kNumMetrics> half{};
  bool have_ci = true;
  for (size_t m = 0; m < kNumMetrics; ++m) {
    std::vector<double> v;
    for (const auto& r : results) v.push_back(r.metrics[m]);
    out.metrics[m] = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    const auto h = ci_half_width(v);
    have_ci = have_ci && h.has_value();
    half[m] = h.value_or(0.0);
  }
  if (have_ci) out.ci_half_width = half;
  double spe = 0.0;
  for (const auto& r : results) spe += r.seconds_per_episode;
  out.seconds_per_episode = spe / results.size();
  return out;
}

MetaTestResult meta_testing(const Detector& model, const DatasetSplit& support_pool,
                            const DatasetSplit& test, ImageStore& pool_images,
                            ImageStore& test_images, const MetaTestOptions& opt) {
  if (opt.ways < 1 || opt.shots < 1 || opt.episodes < 1 || opt.queries_per_category < 1) {
    throw UsageError("meta-testing needs positive ways, shots, episodes and queries");
  }
  // Eligible: novel categories with enough supports and at least one query.
  const auto pool_counts = support_pool.instance_counts();
  std::vector<int> eligible;
  for (int c : test.novel_categories) {
    auto it = pool_counts.find(c);
    const bool supported = it != pool_counts.end() && it->second >= static_cast<size_t>(opt.shots);
    bool queried = false;
    for (const auto& r : test.records) queried = queried || r.has_category(c);
    if (supported && queried) eligible.push_back(c);
  }
  if (static_cast<int>(eligible.size()) < opt.ways) {
    throw DataError("meta-testing needs " + std::to_string(opt.ways) +
                    " novel categories with supports and queries; found " +
                    std::to_string(eligible.size()));
  }
  const bool shared_pool = &support_pool == &test;

  MetaTestResult result;
  for (int e = 0; e < opt.episodes; ++e) {
    Rng rng = Rng::derive(opt.seed, static_cast<uint64_t>(e));
    std::vector<int> cats;
    for (size_t i : rng.choose(eligible.size(), opt.ways)) cats.push_back(eligible[i]);
    std::sort(cats.begin(), cats.end());

    std::vector<const ImageRecord*> queries;
    std::set<int64_t> used;
    for (int c : cats) {
      std::vector<const ImageRecord*> pool;
      for (const auto& r : test.records) {
        if (r.has_category(c) && !used.count(r.id)) pool.push_back(&r);
      }
      const size_t k = std::min(pool.size(), static_cast<size_t>(opt.queries_per_category));
      for (size_t i : rng.choose(pool.size(), k)) {
        queries.push_back(pool[i]);
        used.insert(pool[i]->id);
      }
    }
    std::vector<int64_t> exclude;
    if (shared_pool) exclude.assign(used.begin(), used.end());
    const auto sets = sample_support_sets(support_pool, cats, opt.shots, rng, exclude);

    const auto start = std::chrono::steady_clock::now();
    const auto protos = encode_supports(model, sets, support_pool, pool_images);
    std::vector<ImageDetection> dets;
    std::vector<ImageRecord> qrec;
    for (const auto* q : queries) {
      for (const auto& d : detect(model, test_images.get(*q), protos)) dets.push_back({q->id, d});
      qrec.push_back(*q);
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    EvalResult r = compute_ap(dets, ground_truth_of(qrec, cats));
    r.seconds_per_episode = secs;
    result.per_episode.push_back(r);
  }
  result.summary = summarize(result.per_episode);
  return result;
}

// ---------------------------------------------------------------------------
// Reports

std::string coco_results_json(std::span<const ImageDetection> detections) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& d : detections) {
    const Box& b = d.det.box;
    arr.push_back({{"image_id", d.image_id},
                   {"category_id", d.det.category},
                   {"bbox", {b.x1, b.y1, b.width(), b.height()}},
                   {"score", d.det.score}});
  }
  return arr.dump(1);
}

std::string metrics_json(const EvalResult& r) {
  nlohmann::json j;
  for (size_t i = 0; i < kNumMetrics; ++i) j["metrics"][std::string(kMetricNames[i])] = r.metrics[i];
  if (r.ci_half_width) {
    for (size_t i = 0; i < kNumMetrics; ++i) {
      j["ci95_half_width"][std::string(kMetricNames[i])] = (*r.ci_half_width)[i];
    }
  } else {
    j["ci95_half_width"] = nullptr;
  }
  j["episodes"] = r.episodes;
  j["seconds_per_episode"] = r.seconds_per_episode;
  return j.dump(1);
}

std::string metrics_text(const EvalResult& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  for (size_t i = 0; i < kNumMetrics; ++i) {
    os << kMetricNames[i] << " = " << r.metrics[i];
    if (r.ci_half_width) os << " +/- " << (*r.ci_half_width)[i];
    os << "\n";
  }
  os << "episodes = " << r.episodes << "\n";
  os << "seconds_per_episode = " << r.seconds_per_episode << "\n";
  return os.str();
}

}  // namespace irfsod
