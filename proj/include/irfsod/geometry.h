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
#ifndef IRFSOD_GEOMETRY_H_
#define IRFSOD_GEOMETRY_H_

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace irfsod {

// Axis-aligned box in pixel units, corner convention. Width is x2 - x1 (no
// +1 term), so a box [0,0,10,10] has area 100.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }

  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
           std::isfinite(y2) && x2 > x1 && y2 > y1;
  }

  // COCO [x, y, w, h] <-> corners. Conversion happens only at the data
  // boundary.
  static Box from_xywh(double x, double y, double w, double h) {
    return {x, y, x + w, y + h};
  }

  friend bool operator==(const Box&, const Box&) = default;
};

// Faster R-CNN regression offsets relative to a reference box.
struct BoxDelta {
  double dx = 0.0;
  double dy = 0.0;
  double dw = 0.0;
  double dh = 0.0;

  friend bool operator==(const BoxDelta&, const BoxDelta&) = default;
};

struct Detection {
  Box box;
  int category = 0;
  double score = 0.0;
};

// ln(1000 / 16): largest log-scale factor accepted by decode_delta.
inline const double kMaxDeltaLogScale = std::log(1000.0 / 16.0);

double iou(const Box& a, const Box& b);

// Throws UsageError when the anchor has zero width or height.
BoxDelta encode_delta(const Box& target, const Box& anchor);

// dw and dh are clamped to max_log_scale before exponentiation.
Box decode_delta(const Box& anchor, const BoxDelta& delta,
                 double max_log_scale = kMaxDeltaLogScale);

Box clip_box(const Box& box, double image_width, double image_height);

// Greedy class-agnostic NMS. Returns kept indices into `boxes`, ordered by
// descending score; equal scores keep the lower input index first.
std::vector<size_t> nms_indices(std::span<const Box> boxes,
                                std::span<const double> scores,
                                double iou_threshold);

// Per-category greedy NMS over detections. Output is sorted by descending
// score (ties by input order).
std::vector<Detection> nms(std::span<const Detection> dets,
                           double iou_threshold);

}  // namespace irfsod

#endif  // IRFSOD_GEOMETRY_H_
