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
#include "irfsod/training.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "irfsod/errors.h"

namespace irfsod {

std::optional<ContrastiveEpisode> build_contrastive_episode(const ImageRecord& query,
                                                            const DatasetSplit& base, int shots,
                                                            Rng& rng) {
  std::map<int, size_t> elsewhere;
  for (const auto& r : base.records) {
    if (r.id == query.id) continue;
    for (const auto& a : r.annotations) ++elsewhere[a.category];
  }
  auto enough = [&](int cat) {
    auto it = elsewhere.find(cat);
    return it != elsewhere.end() && it->second >= static_cast<size_t>(shots);
  };
  std::vector<int> present;
  for (const auto& a : query.annotations) {
    if (std::find(base.base_categories.begin(), base.base_categories.end(), a.category) ==
        base.base_categories.end()) {
      continue;
    }
    if (enough(a.category) &&
        std::find(present.begin(), present.end(), a.category) == present.end()) {
      present.push_back(a.category);
    }
  }
  std::vector<int> absent;
  for (int cat : base.base_categories) {
    if (!query.has_category(cat) && enough(cat)) absent.push_back(cat);
  }
  if (present.empty() || absent.empty()) return std::nullopt;
  std::sort(present.begin(), present.end());

  ContrastiveEpisode ep;
  ep.query_id = query.id;
  ep.positive_category = present[rng.index(present.size())];
  ep.negative_category = absent[rng.index(absent.size())];
  const int64_t exclude[] = {query.id};
  const int c1[] = {ep.positive_category};
  const int c2[] = {ep.negative_category};
  ep.positive_support = std::move(sample_support_sets(base, c1, shots, rng, exclude).front());
  ep.negative_support = std::move(sample_support_sets(base, c2, shots, rng, exclude).front());
  return ep;
}

LossBundle total_loss(double rpn_cls, double rpn_reg, double cls, double reg) {
  for (double v : {rpn_cls, rpn_reg, cls, reg}) {
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "non-finite loss component (rpn_cls=" << rpn_cls << ", rpn_reg=" << rpn_reg
         << ", cls=" << cls << ", reg=" << reg << ")";
      throw NumericalError(os.str());
    }
  }
  LossBundle b{rpn_cls, rpn_reg, cls, reg, 0.0};
  b.total = b.rpn() + cls + reg;
  return b;
}

namespace {

// Best c1 match of a box, if it reaches pos_iou.
std::optional<Box> match_c1(const Box& box, std::span<const Box> c1_boxes, double pos_iou) {
  double best = 0.0;
  std::optional<Box> out;
  for (const Box& g : c1_boxes) {
    const double o = iou(box, g);
    if (o > best) {
      best = o;
      if (o >= pos_iou) out = g;
    }
  }
  if (best < pos_iou) return std::nullopt;
  return out;
}

double bce_prob(double p, double target) {
  constexpr double kEps = 1e-12;
  p = std::clamp(p, kEps, 1.0 - kEps);
  return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

std::vector<Box> boxes_of(const ImageRecord& rec, std::optional<int> category = std::nullopt) {
  std::vector<Box> out;
  for (const auto& a : rec.annotations) {
    if (!category || a.category == *category) out.push_back(a.box);
  }
  return out;
}

}  // namespace

double roi_classification_loss(std::span<const Box> proposals, std::span<const double> scores_c1,
                               std::span<const double> scores_c2, std::span<const Box> c1_boxes,
                               double pos_iou) {
  const size_t n = proposals.size();
  if (scores_c1.size() != n || scores_c2.size() != n) {
    throw UsageError("roi_classification_loss: score count does not match proposals");
  }
  if (n == 0) return 0.0;
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double label = match_c1(proposals[i], c1_boxes, pos_iou) ? 1.0 : 0.0;
    sum += bce_prob(scores_c1[i], label) + bce_prob(scores_c2[i], 0.0);
  }
  return sum / (2.0 * static_cast<double>(n));
}

double roi_regression_loss(std::span<const Box> proposals, std::span<const BoxDelta> predicted,
                           std::span<const Box> c1_boxes, double pos_iou) {
  if (predicted.size() != proposals.size()) {
    throw UsageError("roi_regression_loss: delta count does not match proposals");
  }
  double sum = 0.0;
  size_t matched = 0;
  for (size_t i = 0; i < proposals.size(); ++i) {
    const auto gt = match_c1(proposals[i], c1_boxes, pos_iou);
    if (!gt) continue;
    const BoxDelta t = encode_delta(*gt, proposals[i]);
    const BoxDelta& p = predicted[i];
    sum += nn::smooth_l1(p.dx - t.dx) + nn::smooth_l1(p.dy - t.dy) +
           nn::smooth_l1(p.dw - t.dw) + nn::smooth_l1(p.dh - t.dh);
    ++matched;
  }
  return matched ? sum / static_cast<double>(matched) : 0.0;
}

StepPlan plan_step(const Detector& model, const ContrastiveEpisode& episode,
                   const DatasetSplit& base, ImageStore& images, Rng& rng) {
  const RunConfig& cfg = model.config();
  const ImageRecord* rec = base.find(episode.query_id);
  if (!rec) throw DataError("episode query image is not in the base split");
  const Image& image = images.get(*rec);

  const FeatureMap fm = model.backbone.forward(image);
  const RpnOutput out = model.rpn.forward(fm, nullptr);
  for (size_t i = 0; i < out.logits.size(); ++i) {
    const BoxDelta& d = out.deltas[i];
    if (!std::isfinite(out.logits[i]) || !std::isfinite(d.dx) || !std::isfinite(d.dy) ||
        !std::isfinite(d.dw) || !std::isfinite(d.dh)) {
      throw NumericalError("non-finite proposal network output");
    }
  }

  StepPlan plan;
  plan.episode = episode;
  AnchorBatch& batch = plan.anchors;
  batch.anchors = model.anchors(fm);
  batch.objectness = out.objectness;
  batch.deltas = out.deltas;
  const std::vector<Box> gt = boxes_of(*rec);
  label_anchors(batch, gt, cfg.rpn.neg_iou, cfg.rpn.pos_iou);
  if (cfg.ablation.ss_rpn && cfg.rpn.pseudo_labels) {
    plan.pseudo_positives = assign_pseudo_labels(batch, cfg.rpn.tau);
  }
  plan.sampled_anchors = sample_batch(batch, cfg.rpn.caps, rng);

  std::vector<Box> candidates;
  for (const auto& p : propose(out.objectness, out.deltas, batch.anchors, cfg.rpn, image.width,
                               image.height)) {
    candidates.push_back(p.box);
  }
  candidates.insert(candidates.end(), gt.begin(), gt.end());

  const std::vector<Box> c1 = boxes_of(*rec, episode.positive_category);
  const auto& cats = cfg.data.base_categories;
  std::vector<RoiSample> fg, bg;
  for (const Box& box : candidates) {
    RoiSample s;
    s.box = box;
    s.matched_gt = match_c1(box, c1, cfg.heads.roi_pos_iou);
    s.foreground = s.matched_gt.has_value();
    double best = 0.0;
    for (const auto& a : rec->annotations) {
      const double o = iou(box, a.box);
      if (o >= cfg.heads.roi_pos_iou && o > best) {
        best = o;
        auto it = std::find(cats.begin(), cats.end(), a.category);
        s.multi_label = it == cats.end() ? 0 : static_cast<int>(it - cats.begin()) + 1;
      }
    }
    (s.foreground ? fg : bg).push_back(s);
  }
  const size_t fg_cap = static_cast<size_t>(
      std::max(1.0, std::floor(cfg.heads.roi_samples * cfg.heads.roi_fg_fraction)));
  const size_t take_fg = std::min(fg.size(), fg_cap);
  const size_t take_bg = std::min(bg.size(), static_cast<size_t>(cfg.heads.roi_samples) - take_fg);
  for (size_t i : rng.choose(fg.size(), take_fg)) plan.rois.push_back(fg[i]);
  for (size_t i : rng.choose(bg.size(), take_bg)) plan.rois.push_back(bg[i]);
  return plan;
}

namespace {

struct SupportBranch {
  const ImageRecord* record = nullptr;
  FeatureMap fm;
  BackboneCache cache;
  Tensor grad;
};

}  // namespace

LossBundle evaluate_step(Detector& model, const StepPlan& plan, const DatasetSplit& base,
                         ImageStore& images, bool backward, double grad_scale) {
  const RunConfig& cfg = model.config();
  const int r = cfg.heads.roi_resolution;
  const ImageRecord* rec = base.find(plan.episode.query_id);
  if (!rec) throw DataError("episode query image is not in the base split");

  // Query branch.
  BackboneCache qcache;
  const FeatureMap fm = model.backbone.forward(images.get(*rec), backward ? &qcache : nullptr);
  RpnCache rcache;
  const RpnOutput out = model.rpn.forward(fm, &rcache);
  AnchorBatch batch = plan.anchors;
  batch.objectness = out.objectness;
  batch.deltas = out.deltas;
  const RpnLoss rpn = rpn_loss(batch, plan.sampled_anchors, out.logits);

  std::vector<RegionFeature> rois;
  rois.reserve(plan.rois.size());
  for (const auto& s : plan.rois) rois.push_back(roi_extract(fm, s.box, r));

  // Support branch: one backbone pass per distinct support image.
  const bool support_backward = backward && cfg.train.support_grad;
  std::map<int64_t, SupportBranch> branches;
  auto encode = [&](const SupportSet& set) {
    std::vector<RegionFeature> inst;
    for (const auto& item : set.items) {
      auto it = branches.find(item.image_id);
      if (it == branches.end()) {
        SupportBranch b;
        b.record = base.find(item.image_id);
        if (!b.record) throw DataError("support image is not in the base split");
        b.fm = model.backbone.forward(images.get(*b.record), support_backward ? &b.cache : nullptr);
        it = branches.emplace(item.image_id, std::move(b)).first;
      }
      inst.push_back(roi_extract(it->second.fm, item.box, r));
    }
    return support_prototype(inst, set.category);
  };
  const SupportFeature p1 = encode(plan.episode.positive_support);
  const SupportFeature p2 = encode(plan.episode.negative_support);

  Tensor g_p1(p1.proto.pooled.shape());
  Tensor g_p2(p2.proto.pooled.shape());
  std::vector<Tensor> g_x;
  if (backward) {
    for (const auto& x : rois) g_x.emplace_back(x.pooled.shape());
  }

  // Box classification.
  const size_t n = rois.size();
  double cls = 0.0;
  const ClassifierHead head = cfg.ablation.train_head();
  if (n > 0 && head != ClassifierHead::kMulti) {
    const double norm = 1.0 / (2.0 * static_cast<double>(n));
    const double alpha = cfg.effective_alpha();
    for (size_t i = 0; i < n; ++i) {
      const double y1 = plan.rois[i].foreground ? 1.0 : 0.0;
      const std::pair<const SupportFeature*, double> pairs[] = {{&p1, y1}, {&p2, 0.0}};
      Tensor* grads[] = {&g_p1, &g_p2};
      for (int k = 0; k < 2; ++k) {
        const SupportFeature& proto = *pairs[k].first;
        const double y = pairs[k].second;
        ComparisonCache cc;
        const double logit = head == ClassifierHead::kComparison
                                 ? model.comparison.logit(rois[i], proto, backward ? &cc : nullptr)
                                 : cfg.heads.lambda * distance_similarity(rois[i], proto, alpha);
        cls += nn::bce_with_logit(logit, y) * norm;
        if (!backward) continue;
        const double dlogit = (nn::sigmoid(logit) - y) * norm * grad_scale;
        if (head == ClassifierHead::kComparison) {
          model.comparison.backward(rois[i], proto, cc, dlogit, &g_x[i], grads[k]);
        } else {
          distance_similarity_backward(rois[i], proto, alpha, dlogit * cfg.heads.lambda, &g_x[i],
                                       grads[k]);
        }
      }
    }
  } else if (n > 0) {
    const double norm = 1.0 / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
      const auto logits = model.multi.logits(rois[i]);
      auto prob = softmax(logits);
      const int label = plan.rois[i].multi_label;
      cls += -std::log(std::max(prob[label], 1e-300)) * norm;
      if (!backward) continue;
      prob[label] -= 1.0;
      for (double& g : prob) g *= norm * grad_scale;
      model.multi.backward(rois[i], prob, &g_x[i]);
    }
  }

  // Box regression against the c1 prototype, foreground only.
  double reg = 0.0;
  size_t n_fg = 0;
  for (const auto& s : plan.rois) n_fg += s.foreground ? 1 : 0;
  if (n_fg > 0) {
    const double norm = 1.0 / static_cast<double>(n_fg);
    for (size_t i = 0; i < n; ++i) {
      if (!plan.rois[i].foreground) continue;
      RegressorCache rc;
      const BoxDelta p = model.regressor.forward(rois[i], p1, backward ? &rc : nullptr);
      const BoxDelta t = encode_delta(*plan.rois[i].matched_gt, plan.rois[i].box);
      const double e[4] = {p.dx - t.dx, p.dy - t.dy, p.dw - t.dw, p.dh - t.dh};
      for (double v : e) reg += nn::smooth_l1(v) * norm;
      if (!backward) continue;
      const double s = norm * grad_scale;
      const BoxDelta g{nn::smooth_l1_grad(e[0]) * s, nn::smooth_l1_grad(e[1]) * s,
                       nn::smooth_l1_grad(e[2]) * s, nn::smooth_l1_grad(e[3]) * s};
      model.regressor.backward(rois[i], p1, rc, g, &g_x[i], &g_p1);
    }
  }

  const LossBundle loss = total_loss(rpn.cls, rpn.reg, cls, reg);
  if (!backward) return loss;

  // Query backward: RPN head, RoI pooling, backbone.
  std::vector<double> g_logits(rpn.grad_logits);
  std::vector<BoxDelta> g_deltas(rpn.grad_deltas);
  for (double& g : g_logits) g *= grad_scale;
  for (BoxDelta& g : g_deltas) {
    g.dx *= grad_scale; g.dy *= grad_scale; g.dw *= grad_scale; g.dh *= grad_scale;
  }
  Tensor g_fm = model.rpn.backward(rcache, g_logits, g_deltas);
  for (size_t i = 0; i < n; ++i) roi_extract_backward(fm, plan.rois[i].box, r, g_x[i], g_fm);
  model.backbone.backward(qcache, g_fm);

  if (support_backward) {
    auto scatter = [&](const SupportSet& set, const Tensor& g_proto) {
      Tensor g_inst = g_proto;
      const double inv_k = 1.0 / static_cast<double>(set.items.size());
      for (double& v : g_inst.values()) v *= inv_k;
      for (const auto& item : set.items) {
        SupportBranch& b = branches.at(item.image_id);
        if (b.grad.empty()) b.grad = Tensor(b.fm.values.shape());
        roi_extract_backward(b.fm, item.box, r, g_inst, b.grad);
      }
    };
    scatter(plan.episode.positive_support, g_p1);
    scatter(plan.episode.negative_support, g_p2);
    for (auto& [id, b] : branches) {
      if (!b.grad.empty()) model.backbone.backward(b.cache, b.grad);
    }
  }
  return loss;
}

std::string format_log_record(const TrainLogRecord& rec) {
  std::ostringstream os;
  os.precision(10);
  os << "{\"iteration\": " << rec.iteration << ", \"L_rpn\": " << rec.loss.rpn()
     << ", \"L_cls\": " << rec.loss.cls << ", \"L_reg\": " << rec.loss.reg
     << ", \"total\": " << rec.loss.total << ", \"lr\": " << rec.lr
     << ", \"pseudo_positives\": " << rec.pseudo_positives
     << ", \"grad_norm\": " << rec.grad_norm << "}";
  return os.str();
}

void SgdOptimizer::step(ParamRefs params, double lr) {
  if (velocity_.size() != params.size()) {
    velocity_.assign(params.size(), {});
    for (size_t i = 0; i < params.size(); ++i) {
      velocity_[i].assign(params[i].get().value.size(), 0.0);
    }
  }
  for (size_t i = 0; i < params.size(); ++i) {
    Param& p = params[i];
    auto& v = velocity_[i];
    for (size_t j = 0; j < v.size(); ++j) {
      const double g = p.grad[j] + weight_decay_ * p.value[j];
      v[j] = momentum_ * v[j] + g;
      p.value[j] -= lr * v[j];
    }
  }
}

double clip_gradients(ParamRefs params, double max_norm) {
  double sq = 0.0;
  for (const Param& p : params) {
    for (double g : p.grad.values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Param& p : params) {
      for (double& g : p.grad.values()) g *= s;
    }
  }
  return norm;
}

TrainResult train(Detector& model, const DatasetSplit& base, ImageStore& images,
                  const TrainLogger& logger) {
  const TrainConfig& tc = model.config().train;
  Rng rng = Rng::derive(tc.seed, 0x7472616eULL);
  std::vector<size_t> order;
  for (size_t i = 0; i < base.records.size(); ++i) {
    if (!base.records[i].annotations.empty()) order.push_back(i);
  }
  if (order.empty()) throw DataError("training split has no annotated images");

  TrainResult result;
  SgdOptimizer opt(tc.momentum, tc.weight_decay);
  size_t cursor = order.size();
  size_t misses_in_row = 0;
  for (int it = 0; it < tc.iterations; ++it) {
    model.zero_grad();
    LossBundle acc;
    size_t pseudo = 0;
    int collected = 0;
    while (collected < tc.batch_size) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      const ImageRecord& query = base.records[order[cursor++]];
      auto episode = build_contrastive_episode(query, base, tc.shots, rng);
      if (!episode) {
        ++result.skipped_queries;
        if (++misses_in_row > order.size()) {
          throw DataError("no image yields a contrastive episode; need >= " +
                          std::to_string(tc.shots) + " instances of at least two base categories");
        }
        continue;
      }
      misses_in_row = 0;
      const double scale = 1.0 / tc.batch_size;
      StepPlan plan;
      LossBundle l;
      try {
        plan = plan_step(model, *episode, base, images, rng);
        l = evaluate_step(model, plan, base, images, true, scale);
      } catch (const NumericalError& e) {
        throw NumericalError("training diverged at iteration " + std::to_string(it) + ": " +
                             e.what());
      }
      acc.rpn_cls += l.rpn_cls * scale;
      acc.rpn_reg += l.rpn_reg * scale;
      acc.cls += l.cls * scale;
      acc.reg += l.reg * scale;
      pseudo += plan.pseudo_positives;
      ++collected;
    }
    const LossBundle loss = total_loss(acc.rpn_cls, acc.rpn_reg, acc.cls, acc.reg);
    const double lr = tc.lr_at(it);
    double norm = 0.0;
    try {
      norm = clip_gradients(model.parameters(), tc.clip_grad_norm);
    } catch (const NumericalError& e) {
      throw NumericalError("training diverged at iteration " + std::to_string(it) + ": " +
                           e.what());
    }
    opt.step(model.parameters(), lr);
    TrainLogRecord rec{it, loss, lr, pseudo, norm};
    result.log.push_back(rec);
    if (logger) logger(rec);
  }
  return result;
}

std::vector<LossBundle> train_on_plan(Detector& model, const StepPlan& plan,
                                      const DatasetSplit& base, ImageStore& images,
                                      int iterations, double lr) {
  SgdOptimizer opt(model.config().train.momentum, 0.0);
  std::vector<LossBundle> losses;
  for (int it = 0; it < iterations; ++it) {
    model.zero_grad();
    losses.push_back(evaluate_step(model, plan, base, images, true));
    opt.step(model.parameters(), lr);
  }
  losses.push_back(evaluate_step(model, plan, base, images, false));
  return losses;
}

namespace {

constexpr char kMagic[6] = {'I', 'R', 'F', 'S', 'O', 'D'};

uint64_t fnv1a(const std::string& bytes, size_t n) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& buf, size_t end) : buf_(buf), end_(end) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void read_doubles(double* dst, size_t n) {
    need(n * sizeof(double));
    std::memcpy(dst, buf_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  size_t pos() const { return pos_; }

 private:
  void need(size_t n) const {
    if (pos_ + n > end_) throw DataError("checkpoint is truncated");
  }
  const std::string& buf_;
  size_t end_;
  size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Detector& model, const std::filesystem::path& path) {
  std::string out(kMagic, sizeof(kMagic));
  put<uint32_t>(out, kCheckpointVersion);
  const std::string cfg = model.config().to_text();
  put<uint64_t>(out, cfg.size());
  out += cfg;
  const auto params = model.parameters();
  put<uint32_t>(out, static_cast<uint32_t>(params.size()));
  for (const Param* p : params) {
    put<uint32_t>(out, static_cast<uint32_t>(p->name.size()));
    out += p->name;
    put<uint32_t>(out, static_cast<uint32_t>(p->value.rank()));
    for (int d : p->value.shape()) put<int32_t>(out, d);
    put<uint64_t>(out, p->value.size());
    out.append(reinterpret_cast<const char*>(p->value.data()), p->value.size() * sizeof(double));
  }
  put<uint64_t>(out, fnv1a(out, out.size()));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open checkpoint for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("failed writing checkpoint: " + path.string());
}

Detector load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + sizeof(uint32_t) + sizeof(uint64_t) ||
      buf.compare(0, sizeof(kMagic), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not an irfsod checkpoint: " + path.string());
  }
  const size_t body = buf.size() - sizeof(uint64_t);
  Reader rd(buf, body);
  rd.bytes(sizeof(kMagic));
  const auto version = rd.get<uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + "): " + path.string());
  }
  uint64_t stored;
  std::memcpy(&stored, buf.data() + body, sizeof(stored));
  if (stored != fnv1a(buf, body)) {
    throw DataError("checkpoint checksum mismatch (file is corrupt): " + path.string());
  }
  const auto cfg_len = rd.get<uint64_t>();
  Detector model(RunConfig::from_text(rd.bytes(cfg_len)));
  std::map<std::string, Param*> by_name;
  for (Param& p : model.parameters()) by_name[p.name] = &p;
  const auto count = rd.get<uint32_t>();
  if (count != by_name.size()) {
    throw DataError("checkpoint parameter count does not match its config");
  }
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = rd.bytes(rd.get<uint32_t>());
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint has unknown parameter " + name);
    std::vector<int> shape(rd.get<uint32_t>());
    for (int& d : shape) d = rd.get<int32_t>();
    const auto n = rd.get<uint64_t>();
    Param& p = *it->second;
    if (shape != p.value.shape() || n != p.value.size()) {
      throw DataError("checkpoint parameter " + name + " has the wrong shape");
    }
    rd.read_doubles(p.value.data(), n);
  }
  if (rd.pos() != body) throw DataError("checkpoint has trailing data");
  return model;
}

}  // namespace irfsod
