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
#include "irfsod/geometry.h"

#include <algorithm>
#include <numeric>

#include "irfsod/errors.h"

namespace irfsod {

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  // Ordering the areas keeps the result bit-symmetric even when the
  // compiler fuses a product into the sum.
  const double sa = a.area(), sb = b.area();
  const double uni = (std::min(sa, sb) + std::max(sa, sb)) - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

BoxDelta encode_delta(const Box& target, const Box& anchor) {
  const double aw = anchor.width();
  const double ah = anchor.height();
  if (!(aw > 0.0) || !(ah > 0.0)) {
    throw UsageError("encode_delta: degenerate anchor");
  }
  if (!(target.width() > 0.0) || !(target.height() > 0.0)) {
    throw UsageError("encode_delta: degenerate target box");
  }
  return {(target.center_x() - anchor.center_x()) / aw,
          (target.center_y() - anchor.center_y()) / ah,
          std::log(target.width() / aw), std::log(target.height() / ah)};
}

Box decode_delta(const Box& anchor, const BoxDelta& delta,
                 double max_log_scale) {
  const double aw = anchor.width();
  const double ah = anchor.height();
  const double cx = anchor.center_x() + delta.dx * aw;
  const double cy = anchor.center_y() + delta.dy * ah;
  const double w = aw * std::exp(std::min(delta.dw, max_log_scale));
  const double h = ah * std::exp(std::min(delta.dh, max_log_scale));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

Box clip_box(const Box& box, double image_width, double image_height) {
  return {std::clamp(box.x1, 0.0, image_width),
          std::clamp(box.y1, 0.0, image_height),
          std::clamp(box.x2, 0.0, image_width),
          std::clamp(box.y2, 0.0, image_height)};
}

std::vector<size_t> nms_indices(std::span<const Box> boxes,
                                std::span<const double> scores,
                                double iou_threshold) {
  std::vector<size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  std::vector<size_t> keep;
  std::vector<bool> suppressed(boxes.size(), false);
  for (size_t i = 0; i < order.size(); ++i) {
    const size_t cur = order[i];
    if (suppressed[cur]) continue;
    keep.push_back(cur);
    for (size_t j = i + 1; j < order.size(); ++j) {
      const size_t other = order[j];
      if (!suppressed[other] && iou(boxes[cur], boxes[other]) > iou_threshold) {
        suppressed[other] = true;
      }
    }
  }
  return keep;
}

std::vector<Detection> nms(std::span<const Detection> dets,
                           double iou_threshold) {
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return dets[a].score > dets[b].score;
  });
  std::vector<Detection> kept;
  for (const size_t idx : order) {
    const Detection& d = dets[idx];
    const bool overlaps = std::any_of(
        kept.begin(), kept.end(), [&](const Detection& k) {
          return k.category == d.category && iou(k.box, d.box) > iou_threshold;
        });
    if (!overlaps) kept.push_back(d);
  }
  return kept;
}

}  // namespace irfsod
