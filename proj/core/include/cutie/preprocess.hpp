// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "cutie/image.hpp"
#include "cutie/tensor.hpp"

namespace cutie {

inline constexpr std::array<float, 3> kImageMean{0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kImageStd{0.229f, 0.224f, 0.225f};
inline constexpr std::size_t kSizeMultiple = 16;
inline constexpr float kProbabilityClamp = 1e-7f;

struct WorkingSize {
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const WorkingSize &) const = default;
};

/// Shorter edge scaled to min(max_short_edge, original), then both dims
/// rounded up to a multiple of 16. Throws InputError if either dim is < 16.
WorkingSize working_size(std::size_t height, std::size_t width, std::size_t max_short_edge);

/// RGB8 -> [0,1] -> bilinear resize -> per-channel standardization. 3 x H x W.
Tensor image_to_tensor(const Image &image, WorkingSize size);

/// One-hot mask of `id`, bilinearly resized to `size`. H x W.
Tensor object_mask(const LabelMap &labels, std::uint8_t id, WorkingSize size);

/// Per-pixel sum of every mask except `skip`, accumulated in ascending order so
/// the result does not depend on lane order.
Tensor sum_of_others(const std::vector<Tensor> &masks, std::size_t skip);

/// Soft aggregation of independent per-object probabilities:
///   p_0 = prod_o (1 - p_o),  out_m = odds(p_m) / sum_k odds(p_k),
/// with inputs clamped to [1e-7, 1 - 1e-7]. Returns (O + 1) x H x W with the
/// background first. Products and sums run over sorted values so permuting
/// the inputs permutes the output exactly.
Tensor soft_aggregate(const std::vector<Tensor> &probabilities);

/// Resizes the (O + 1) x h x w distribution to out_h x out_w, then takes the
/// per-pixel argmax. Channel 0 is background, channel m carries ids[m - 1]
/// (ascending). Background wins any tie it is part of. Ties between objects
/// go to the larger `tie_scores` value when given (O x h x w, resized the same
/// way), then to the lowest id.
LabelMap argmax_labels(const Tensor &distribution, const std::vector<std::uint8_t> &ids, std::size_t out_h,
                       std::size_t out_w, const Tensor *tie_scores = nullptr);

} // namespace cutie
