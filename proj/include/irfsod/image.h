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
#ifndef IRFSOD_IMAGE_H_
#define IRFSOD_IMAGE_H_

#include <cstdint>
#include <filesystem>
#include <vector>

namespace irfsod {

// 8-bit interleaved RGB image, row-major (y, x, channel).
struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;

  static constexpr int kChannels = 3;

  Image() = default;
  Image(int w, int h, uint8_t fill = 0)
      : width(w), height(h),
        pixels(static_cast<size_t>(w) * h * kChannels, fill) {}

  bool empty() const { return width <= 0 || height <= 0 || pixels.empty(); }
  uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<size_t>(y) * width + x) * kChannels + c];
  }
  uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * kChannels + c];
  }
};

// PNG and JPEG are detected by signature. Grayscale and alpha inputs are
// converted to RGB. Throws DataError on unreadable files.
Image read_image(const std::filesystem::path& path);

void write_png(const Image& image, const std::filesystem::path& path);

}  // namespace irfsod

#endif  // IRFSOD_IMAGE_H_
