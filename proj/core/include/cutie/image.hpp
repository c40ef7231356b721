// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace cutie {

/// 8-bit RGB frame, interleaved row-major.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::size_t h, std::size_t w) : height(h), width(w), rgb(h * w * 3, 0) {}

  std::uint8_t *pixel(std::size_t y, std::size_t x) { return rgb.data() + (y * width + x) * 3; }
  const std::uint8_t *pixel(std::size_t y, std::size_t x) const { return rgb.data() + (y * width + x) * 3; }
  bool operator==(const Image &) const = default;
};

/// Integer label image; 0 is background. Ids need not be contiguous.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), labels(h * w, fill) {}

  std::uint8_t &at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }

  /// Sorted distinct nonzero labels.
  std::vector<std::uint8_t> object_ids() const {
    bool seen[256] = {};
    for (std::uint8_t v : labels) {
      seen[v] = true;
    }
    std::vector<std::uint8_t> ids;
    for (int v = 1; v < 256; ++v) {
      if (seen[v]) {
        ids.push_back(static_cast<std::uint8_t>(v));
      }
    }
    return ids;
  }
  bool operator==(const LabelMap &) const = default;
};

} // namespace cutie
