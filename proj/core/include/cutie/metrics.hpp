// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>

#include "cutie/image.hpp"

namespace cutie {

/// Region similarity |P & G| / |P | G| on the binary masks of `object_id`;
/// 1 when both are empty.
double jaccard(const LabelMap &pred, const LabelMap &gt, std::uint8_t object_id);

/// Contour accuracy. Boundary pixels are object pixels with an in-image
/// 4-neighbor outside the object. A boundary pixel counts as matched if the
/// other boundary has a pixel within Euclidean distance tol_px (disk
/// dilation). F is the harmonic mean of precision and recall; 1 when both
/// boundaries are empty, 0 when exactly one is.
double boundary_f(const LabelMap &pred, const LabelMap &gt, std::uint8_t object_id, std::size_t tol_px);

/// ceil(0.008 * image diagonal).
std::size_t default_boundary_tolerance(std::size_t height, std::size_t width);

} // namespace cutie
