// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cutie/image.hpp"

namespace cutie {

using Palette = std::array<std::array<std::uint8_t, 3>, 256>;

/// Fixed mask color table (the PASCAL VOC / DAVIS bit-interleaved palette).
const Palette &mask_palette();

/// Any PNG color type, converted to 8-bit RGB (alpha dropped).
Image decode_png_image(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png_image(const Image &image);
Image read_image(const std::filesystem::path &path);
void write_image(const Image &image, const std::filesystem::path &path);

/// Indexed-palette or 8-bit grayscale PNG; the index / gray value is the
/// label. Truecolor, alpha and 16-bit images are rejected with FormatError.
LabelMap decode_mask_png(std::span<const std::uint8_t> bytes);
/// Indexed PNG with the fixed palette. Output bytes depend only on the labels.
std::vector<std::uint8_t> encode_mask_png(const LabelMap &mask);

/// PGM, ASCII (P2) or binary (P5), maxval <= 255.
LabelMap decode_mask_pgm(std::span<const std::uint8_t> bytes);
/// ASCII PGM (P2).
std::vector<std::uint8_t> encode_mask_pgm(const LabelMap &mask);

/// Dispatches on content: PNG signature or a P2/P5 header.
LabelMap decode_mask(std::span<const std::uint8_t> bytes);
LabelMap read_mask(const std::filesystem::path &path);
/// Writes ASCII PGM for a `.pgm` extension and indexed PNG otherwise.
void write_mask(const LabelMap &mask, const std::filesystem::path &path);

/// Regular files in `dir` with the given extension (case-insensitive), in
/// lexicographic filename order.
std::vector<std::filesystem::path> list_files(const std::filesystem::path &dir, std::string_view extension);

} // namespace cutie
