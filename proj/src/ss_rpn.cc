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
#include "irfsod/ss_rpn.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "irfsod/errors.h"

namespace irfsod {

const char* to_string(AnchorLabel label) {
  switch (label) {
    case AnchorLabel::kNegative: return "negative";
    case AnchorLabel::kPositive: return "positive";
    case AnchorLabel::kPseudoPositive: return "pseudo_positive";
    case AnchorLabel::kIgnore: return "ignore";
  }
  return "unknown";
}

size_t AnchorBatch::count(AnchorLabel label) const {
  return static_cast<size_t>(std::count(labels.begin(), labels.end(), label));
}

void SsRpnConfig::validate() const {
  if (!(tau > 0.0 && tau <= 1.0)) throw UsageError("rpn.tau must lie in (0, 1]");
  if (!(neg_iou < pos_iou)) throw UsageError("rpn.neg_iou must be below rpn.pos_iou");
  if (caps.positive <= 0 || caps.negative <= 0 || caps.pseudo_positive <= 0) {
    throw UsageError("rpn.caps must be positive");
  }
  if (scales.empty() || ratios.empty()) throw UsageError("rpn.scales and rpn.ratios must be non-empty");
  for (double s : scales) if (!(s > 0)) throw UsageError("rpn.scales must be positive");
  for (double r : ratios) if (!(r > 0)) throw UsageError("rpn.ratios must be positive");
  if (hidden_channels <= 0 || pre_nms_top_n <= 0 || post_nms_top_n <= 0) {
    throw UsageError("rpn sizes must be positive");
  }
}

std::vector<Box> generate_anchors(int map_height, int map_width, int stride,
                                  std::span<const double> scales,
                                  std::span<const double> ratios) {
  std::vector<Box> anchors;
  anchors.reserve(static_cast<size_t>(map_height) * map_width * scales.size() * ratios.size());
  for (int y = 0; y < map_height; ++y) {
    for (int x = 0; x < map_width; ++x) {
      const double cx = (x + 0.5) * stride;
      const double cy = (y + 0.5) * stride;
      for (double s : scales) {
        for (double r : ratios) {
          const double w = s / std::sqrt(r);
          const double h = s * std::sqrt(r);
          anchors.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
        }
      }
    }
  }
  return anchors;
}

void label_anchors(AnchorBatch& batch, std::span<const Box> gt_boxes, double neg_iou,
                   double pos_iou) {
  const size_t n = batch.anchors.size();
  batch.labels.assign(n, AnchorLabel::kNegative);
  batch.matched_gt.assign(n, std::nullopt);
  if (gt_boxes.empty()) return;

  std::vector<double> best_gt_iou(gt_boxes.size(), 0.0);
  std::vector<size_t> argmax(n, 0);
  std::vector<double> max_iou(n, 0.0);
  for (size_t a = 0; a < n; ++a) {
    for (size_t g = 0; g < gt_boxes.size(); ++g) {
      const double o = iou(batch.anchors[a], gt_boxes[g]);
      if (o > max_iou[a]) {
        max_iou[a] = o;
        argmax[a] = g;
      }
      best_gt_iou[g] = std::max(best_gt_iou[g], o);
    }
  }
  for (size_t a = 0; a < n; ++a) {
    if (max_iou[a] < neg_iou) {
      batch.labels[a] = AnchorLabel::kNegative;
    } else if (max_iou[a] > pos_iou) {
      batch.labels[a] = AnchorLabel::kPositive;
      batch.matched_gt[a] = gt_boxes[argmax[a]];
    } else {
      batch.labels[a] = AnchorLabel::kIgnore;
    }
  }
  // Every GT keeps at least its best-overlapping anchor(s).
  for (size_t g = 0; g < gt_boxes.size(); ++g) {
    if (best_gt_iou[g] <= 0.0) continue;
    for (size_t a = 0; a < n; ++a) {
      if (iou(batch.anchors[a], gt_boxes[g]) == best_gt_iou[g]) {
        batch.labels[a] = AnchorLabel::kPositive;
        batch.matched_gt[a] = gt_boxes[g];
      }
    }
  }
}

size_t assign_pseudo_labels(AnchorBatch& batch, double tau) {
  if (batch.objectness.size() != batch.labels.size()) {
    throw UsageError("assign_pseudo_labels: objectness not populated");
  }
  size_t relabeled = 0;
  for (size_t a = 0; a < batch.labels.size(); ++a) {
    if (batch.labels[a] == AnchorLabel::kNegative && batch.objectness[a] > tau) {
      batch.labels[a] = AnchorLabel::kPseudoPositive;
      ++relabeled;
    }
  }
  return relabeled;
}

std::vector<size_t> sample_batch(const AnchorBatch& batch, const SampleCaps& caps, Rng& rng) {
  std::vector<size_t> pos, pseudo, neg;
  for (size_t a = 0; a < batch.labels.size(); ++a) {
    switch (batch.labels[a]) {
      case AnchorLabel::kPositive: pos.push_back(a); break;
      case AnchorLabel::kPseudoPositive: pseudo.push_back(a); break;
      case AnchorLabel::kNegative: neg.push_back(a); break;
      case AnchorLabel::kIgnore: break;
    }
  }
  if (pos.empty() && pseudo.empty() && neg.empty()) {
    throw DataError("sample_batch: no labeled anchors available");
  }
  const size_t take_pos = std::min(pos.size(), static_cast<size_t>(caps.positive));
  const size_t take_pseudo = std::min(pseudo.size(), static_cast<size_t>(caps.pseudo_positive));
  const size_t neg_budget = static_cast<size_t>(caps.negative) +
                            (static_cast<size_t>(caps.positive) - take_pos) +
                            (static_cast<size_t>(caps.pseudo_positive) - take_pseudo);
  const size_t take_neg = std::min(neg.size(), neg_budget);

  std::vector<size_t> out;
  out.reserve(take_pos + take_pseudo + take_neg);
  for (size_t i : rng.choose(pos.size(), take_pos)) out.push_back(pos[i]);
  for (size_t i : rng.choose(pseudo.size(), take_pseudo)) out.push_back(pseudo[i]);
  for (size_t i : rng.choose(neg.size(), take_neg)) out.push_back(neg[i]);
  return out;
}

RpnHead::RpnHead(int in_channels, int hidden_channels, int anchors_per_cell)
    : anchors_per_cell_(anchors_per_cell),
      hidden_("rpn.conv", {in_channels, hidden_channels, 3, 1, 1}),
      cls_("rpn.cls", {hidden_channels, anchors_per_cell, 1, 1, 0}),
      reg_("rpn.reg", {hidden_channels, 4 * anchors_per_cell, 1, 1, 0}) {}

void RpnHead::init(Rng& rng) {
  hidden_.init(rng);
  // Small output layers. The objectness bias starts at a low prior so an
  // untrained head does not mark every negative anchor as pseudo positive.
  cls_.init(rng, 0.01);
  const double prior_logit = std::log(kObjectnessPrior / (1.0 - kObjectnessPrior));
  for (double& b : cls_.bias().value.values()) b = prior_logit;
  reg_.init(rng, 0.01);
}

ParamRefs RpnHead::parameters() {
  return {hidden_.weight(), hidden_.bias(), cls_.weight(), cls_.bias(),
          reg_.weight(), reg_.bias()};
}

RpnOutput RpnHead::forward(const FeatureMap& fm, RpnCache* cache) const {
  RpnCache local;
  RpnCache& c = cache ? *cache : local;
  c.hidden = hidden_.forward(fm.values, &c.hidden_conv);
  nn::relu_inplace(c.hidden);
  const Tensor cls = cls_.forward(c.hidden, &c.cls_conv);
  const Tensor reg = reg_.forward(c.hidden, &c.reg_conv);
  c.map_height = fm.height();
  c.map_width = fm.width();

  const int a_count = anchors_per_cell_;
  const size_t n = static_cast<size_t>(fm.height()) * fm.width() * a_count;
  RpnOutput out;
  out.logits.resize(n);
  out.objectness.resize(n);
  out.deltas.resize(n);
  size_t idx = 0;
  for (int y = 0; y < fm.height(); ++y) {
    for (int x = 0; x < fm.width(); ++x) {
      for (int a = 0; a < a_count; ++a, ++idx) {
        out.logits[idx] = cls.at(a, y, x);
        out.objectness[idx] = nn::sigmoid(out.logits[idx]);
        out.deltas[idx] = {reg.at(4 * a, y, x), reg.at(4 * a + 1, y, x),
                           reg.at(4 * a + 2, y, x), reg.at(4 * a + 3, y, x)};
      }
    }
  }
  return out;
}

Tensor RpnHead::backward(const RpnCache& cache, std::span<const double> grad_logits,
                         std::span<const BoxDelta> grad_deltas) {
  const int h = cache.map_height;
  const int w = cache.map_width;
  const int a_count = anchors_per_cell_;
  const size_t n = static_cast<size_t>(h) * w * a_count;
  if (grad_logits.size() != n || grad_deltas.size() != n) {
    throw UsageError("RpnHead::backward: gradient size does not match anchor grid");
  }
  Tensor g_cls({a_count, h, w});
  Tensor g_reg({4 * a_count, h, w});
  size_t idx = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int a = 0; a < a_count; ++a, ++idx) {
        g_cls.at(a, y, x) = grad_logits[idx];
        g_reg.at(4 * a, y, x) = grad_deltas[idx].dx;
        g_reg.at(4 * a + 1, y, x) = grad_deltas[idx].dy;
        g_reg.at(4 * a + 2, y, x) = grad_deltas[idx].dw;
        g_reg.at(4 * a + 3, y, x) = grad_deltas[idx].dh;
      }
    }
  }
  Tensor g_hidden = cls_.backward(cache.cls_conv, g_cls);
  const Tensor g_hidden_reg = reg_.backward(cache.reg_conv, g_reg);
  for (size_t i = 0; i < g_hidden.size(); ++i) g_hidden[i] += g_hidden_reg[i];
  nn::relu_backward_inplace(cache.hidden, g_hidden);
  return hidden_.backward(cache.hidden_conv, g_hidden);
}

RpnLoss rpn_loss(const AnchorBatch& batch, std::span<const size_t> sampled,
                 std::span<const double> logits) {
  const size_t n = batch.anchors.size();
  if (logits.size() != n || batch.deltas.size() != n || batch.labels.size() != n) {
    throw UsageError("rpn_loss: batch fields have inconsistent sizes");
  }
  RpnLoss loss;
  loss.grad_logits.assign(n, 0.0);
  loss.grad_deltas.assign(n, BoxDelta{});
  if (sampled.empty()) return loss;

  const double inv_sampled = 1.0 / static_cast<double>(sampled.size());
  size_t positives = 0;
  for (size_t a : sampled) {
    if (batch.labels[a] == AnchorLabel::kPositive) ++positives;
  }
  const double inv_pos = positives ? 1.0 / static_cast<double>(positives) : 0.0;

  for (size_t a : sampled) {
    const AnchorLabel label = batch.labels[a];
    if (label == AnchorLabel::kIgnore) continue;
    const double target =
        (label == AnchorLabel::kPositive || label == AnchorLabel::kPseudoPositive) ? 1.0 : 0.0;
    loss.cls += nn::bce_with_logit(logits[a], target) * inv_sampled;
    loss.grad_logits[a] += (nn::sigmoid(logits[a]) - target) * inv_sampled;

    if (label == AnchorLabel::kPositive && batch.matched_gt[a]) {
      const BoxDelta t = encode_delta(*batch.matched_gt[a], batch.anchors[a]);
      const BoxDelta& p = batch.deltas[a];
      const double e[4] = {p.dx - t.dx, p.dy - t.dy, p.dw - t.dw, p.dh - t.dh};
      for (double v : e) loss.reg += nn::smooth_l1(v) * inv_pos;
      BoxDelta& g = loss.grad_deltas[a];
      g.dx += nn::smooth_l1_grad(e[0]) * inv_pos;
      g.dy += nn::smooth_l1_grad(e[1]) * inv_pos;
      g.dw += nn::smooth_l1_grad(e[2]) * inv_pos;
      g.dh += nn::smooth_l1_grad(e[3]) * inv_pos;
    }
  }
  return loss;
}

std::vector<Proposal> propose(std::span<const double> objectness,
                              std::span<const BoxDelta> deltas, std::span<const Box> anchors,
                              const SsRpnConfig& cfg, double image_width,
                              double image_height) {
  const size_t n = anchors.size();
  if (objectness.size() != n || deltas.size() != n) {
    throw UsageError("propose: objectness/deltas do not match anchors");
  }
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  const size_t top = std::min(n, static_cast<size_t>(cfg.pre_nms_top_n));
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                    [&](size_t a, size_t b) {
                      if (objectness[a] != objectness[b]) return objectness[a] > objectness[b];
                      return a < b;
                    });
  order.resize(top);

  std::vector<Box> boxes;
  std::vector<double> scores;
  for (size_t a : order) {
    const Box b = clip_box(decode_delta(anchors[a], deltas[a]), image_width, image_height);
    if (b.width() < cfg.min_box_size || b.height() < cfg.min_box_size) continue;
    boxes.push_back(b);
    scores.push_back(objectness[a]);
  }
  const auto keep = nms_indices(boxes, scores, cfg.nms_threshold);
  std::vector<Proposal> out;
  for (size_t i = 0; i < keep.size() && out.size() < static_cast<size_t>(cfg.post_nms_top_n); ++i) {
    out.push_back({boxes[keep[i]], scores[keep[i]]});
  }
  return out;
}

}  // namespace irfsod
