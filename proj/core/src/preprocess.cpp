// SPDX-License-Identifier: Apache-2.0
#include "cutie/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "cutie/errors.hpp"
#include "cutie/tensor_ops.hpp"

namespace cutie {

namespace {

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

} // namespace

WorkingSize working_size(std::size_t height, std::size_t width, std::size_t max_short_edge) {
  if (height < kSizeMultiple || width < kSizeMultiple) {
    throw InputError("image " + std::to_string(height) + "x" + std::to_string(width) +
                     " is smaller than 16 pixels");
  }
  if (max_short_edge < kSizeMultiple) {
    throw ConfigError("max short edge must be at least 16, got " + std::to_string(max_short_edge));
  }
  const std::size_t short_edge = std::min(height, width);
  WorkingSize out{height, width};
  if (short_edge > max_short_edge) {
    const double scale = static_cast<double>(max_short_edge) / static_cast<double>(short_edge);
    out.height = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(height * scale)));
    out.width = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(width * scale)));
  }
  out.height = round_up(out.height, kSizeMultiple);
  out.width = round_up(out.width, kSizeMultiple);
  return out;
}

Tensor image_to_tensor(const Image &image, WorkingSize size) {
  if (image.rgb.size() != image.height * image.width * 3) {
    throw InputError("image buffer does not match its dimensions");
  }
  const std::size_t hw = image.height * image.width;
  Tensor planar({3, image.height, image.width});
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      planar[c * hw + i] = static_cast<float>(image.rgb[i * 3 + c]) / 255.0f;
    }
  }
  Tensor out = (size.height == image.height && size.width == image.width)
                   ? std::move(planar)
                   : bilinear_resize(planar, size.height, size.width);
  const std::size_t out_hw = size.height * size.width;
  for (std::size_t c = 0; c < 3; ++c) {
    float *p = out.ptr() + c * out_hw;
    for (std::size_t i = 0; i < out_hw; ++i) {
      p[i] = (p[i] - kImageMean[c]) / kImageStd[c];
    }
  }
  return out;
}

Tensor object_mask(const LabelMap &labels, std::uint8_t id, WorkingSize size) {
  Tensor onehot({1, labels.height, labels.width});
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    onehot[i] = labels.labels[i] == id ? 1.0f : 0.0f;
  }
  if (size.height != labels.height || size.width != labels.width) {
    onehot = bilinear_resize(onehot, size.height, size.width);
  }
  return std::move(onehot).reshaped({size.height, size.width});
}

Tensor sum_of_others(const std::vector<Tensor> &masks, std::size_t skip) {
  if (masks.empty()) {
    throw DimensionError("sum_of_others: no masks");
  }
  Tensor out(masks.front().shape());
  const std::size_t n = out.numel();
  std::vector<float> vals;
  vals.reserve(masks.size());
  for (std::size_t i = 0; i < n; ++i) {
    vals.clear();
    for (std::size_t m = 0; m < masks.size(); ++m) {
      if (m != skip) {
        vals.push_back(masks[m][i]);
      }
    }
    std::sort(vals.begin(), vals.end());
    float acc = 0.0f;
    for (float v : vals) {
      acc += v;
    }
    out[i] = acc;
  }
  return out;
}

Tensor soft_aggregate(const std::vector<Tensor> &probabilities) {
  if (probabilities.empty()) {
    throw DimensionError("soft_aggregate: no objects");
  }
  const Shape &shape = probabilities.front().shape();
  for (const Tensor &p : probabilities) {
    if (p.shape() != shape) {
      throw DimensionError("soft_aggregate: probability maps differ in shape");
    }
  }
  const std::size_t objects = probabilities.size();
  const std::size_t n = probabilities.front().numel();
  Shape out_shape{objects + 1};
  out_shape.insert(out_shape.end(), shape.begin(), shape.end());
  Tensor out(out_shape);

  constexpr double lo = kProbabilityClamp, hi = 1.0 - kProbabilityClamp;
  std::vector<double> p(objects), sorted(objects + 1), odds(objects + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < objects; ++o) {
      p[o] = std::clamp(static_cast<double>(probabilities[o][i]), lo, hi);
      sorted[o] = 1.0 - p[o];
    }
    std::sort(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(objects));
    double bg = 1.0;
    for (std::size_t o = 0; o < objects; ++o) {
      bg *= sorted[o];
    }
    bg = std::clamp(bg, lo, hi);
    odds[0] = bg / (1.0 - bg);
    for (std::size_t o = 0; o < objects; ++o) {
      odds[o + 1] = p[o] / (1.0 - p[o]);
    }
    std::copy(odds.begin(), odds.end(), sorted.begin());
    std::sort(sorted.begin(), sorted.end());
    double total = 0.0;
    for (double v : sorted) {
      total += v;
    }
    for (std::size_t m = 0; m <= objects; ++m) {
      out[m * n + i] = static_cast<float>(odds[m] / total);
    }
  }
  return out;
}

LabelMap argmax_labels(const Tensor &distribution, const std::vector<std::uint8_t> &ids, std::size_t out_h,
                       std::size_t out_w, const Tensor *tie_scores) {
  if (distribution.rank() != 3 || distribution.dim(0) != ids.size() + 1) {
    throw DimensionError("argmax_labels: distribution " + shape_to_string(distribution.shape()) + " for " +
                         std::to_string(ids.size()) + " objects");
  }
  if (tie_scores && (tie_scores->rank() != 3 || tie_scores->dim(0) != ids.size() ||
                     tie_scores->dim(1) != distribution.dim(1) || tie_scores->dim(2) != distribution.dim(2))) {
    throw DimensionError("argmax_labels: tie scores " + shape_to_string(tie_scores->shape()) + " for distribution " +
                         shape_to_string(distribution.shape()));
  }
  const bool same_size = distribution.dim(1) == out_h && distribution.dim(2) == out_w;
  const Tensor resized = same_size ? distribution : bilinear_resize(distribution, out_h, out_w);
  Tensor scores;
  if (tie_scores) {
    scores = same_size ? *tie_scores : bilinear_resize(*tie_scores, out_h, out_w);
  }
  LabelMap out(out_h, out_w);
  const std::size_t n = out_h * out_w;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    float best_v = resized[i];
    for (std::size_t m = 1; m <= ids.size(); ++m) {
      const float v = resized[m * n + i];
      if (v > best_v || (v == best_v && best != 0 && tie_scores && scores[(m - 1) * n + i] > scores[(best - 1) * n + i])) {
        best_v = v;
        best = m;
      }
    }
    out.labels[i] = best == 0 ? 0 : ids[best - 1];
  }
  return out;
}

} // namespace cutie
