// SPDX-License-Identifier: Apache-2.0
#include "cutie/metrics.hpp"

#include <cmath>
#include <vector>

#include "cutie/errors.hpp"

namespace cutie {

namespace {

void check_dims(const LabelMap &pred, const LabelMap &gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw InputError("metric inputs differ in size: " + std::to_string(pred.height) + "x" +
                     std::to_string(pred.width) + " vs " + std::to_string(gt.height) + "x" +
                     std::to_string(gt.width));
  }
}

std::vector<char> boundary(const LabelMap &m, std::uint8_t id) {
  const std::size_t h = m.height, w = m.width;
  std::vector<char> out(h * w, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (m.at(y, x) != id) {
        continue;
      }
      const bool edge = (y > 0 && m.at(y - 1, x) != id) || (y + 1 < h && m.at(y + 1, x) != id) ||
                        (x > 0 && m.at(y, x - 1) != id) || (x + 1 < w && m.at(y, x + 1) != id);
      out[y * w + x] = edge ? 1 : 0;
    }
  }
  return out;
}

std::vector<char> dilate(const std::vector<char> &src, std::size_t h, std::size_t w, std::size_t radius) {
  if (radius == 0) {
    return src;
  }
  const long r = static_cast<long>(radius);
  std::vector<std::pair<long, long>> offsets;
  for (long dy = -r; dy <= r; ++dy) {
    for (long dx = -r; dx <= r; ++dx) {
      if (dy * dy + dx * dx <= r * r) {
        offsets.emplace_back(dy, dx);
      }
    }
  }
  std::vector<char> out(h * w, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!src[y * w + x]) {
        continue;
      }
      for (const auto &[dy, dx] : offsets) {
        const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
        if (yy >= 0 && xx >= 0 && yy < static_cast<long>(h) && xx < static_cast<long>(w)) {
          out[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)] = 1;
        }
      }
    }
  }
  return out;
}

} // namespace

double jaccard(const LabelMap &pred, const LabelMap &gt, std::uint8_t object_id) {
  check_dims(pred, gt);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool p = pred.labels[i] == object_id, g = gt.labels[i] == object_id;
    inter += (p && g) ? 1 : 0;
    uni += (p || g) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double boundary_f(const LabelMap &pred, const LabelMap &gt, std::uint8_t object_id, std::size_t tol_px) {
  check_dims(pred, gt);
  const std::size_t h = pred.height, w = pred.width;
  const std::vector<char> pb = boundary(pred, object_id), gb = boundary(gt, object_id);
  std::size_t n_pred = 0, n_gt = 0;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    n_pred += pb[i] ? 1 : 0;
    n_gt += gb[i] ? 1 : 0;
  }
  if (n_pred == 0 && n_gt == 0) {
    return 1.0;
  }
  if (n_pred == 0 || n_gt == 0) {
    return 0.0;
  }
  const std::vector<char> pd = dilate(pb, h, w, tol_px), gd = dilate(gb, h, w, tol_px);
  std::size_t pred_hit = 0, gt_hit = 0;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    pred_hit += (pb[i] && gd[i]) ? 1 : 0;
    gt_hit += (gb[i] && pd[i]) ? 1 : 0;
  }
  const double precision = static_cast<double>(pred_hit) / static_cast<double>(n_pred);
  const double recall = static_cast<double>(gt_hit) / static_cast<double>(n_gt);
  if (precision + recall == 0.0) {
    return 0.0;
  }
  return 2.0 * precision * recall / (precision + recall);
}

std::size_t default_boundary_tolerance(std::size_t height, std::size_t width) {
  const double diag = std::sqrt(static_cast<double>(height * height + width * width));
  return static_cast<std::size_t>(std::ceil(0.008 * diag));
}

} // namespace cutie
