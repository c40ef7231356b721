// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cutie/param_registry.hpp"

namespace cutie {

inline constexpr std::uint32_t kWeightFormatVersion = 1;

/// Weight container layout, all integers little-endian:
///   "CUTW" | u32 version | u32 count |
///   count x { u32 name_len | name | u8 dtype (0 = f32) | u32 rank | rank x u64 | f32 payload } |
///   u32 CRC32 of every preceding byte.
/// Entries appear in ascending name order.
std::vector<std::uint8_t> serialize_weights(const ParamRegistry &registry);
/// Throws FormatError on bad magic, version, CRC, dtype or truncation. The
/// returned registry is frozen.
ParamRegistry deserialize_weights(std::span<const std::uint8_t> bytes);

/// Requires a frozen registry (StateError otherwise).
void save_weights(const ParamRegistry &registry, const std::filesystem::path &path);
ParamRegistry load_weights(const std::filesystem::path &path);

std::vector<std::uint8_t> read_file(const std::filesystem::path &path);
void write_file(const std::filesystem::path &path, std::span<const std::uint8_t> bytes);

} // namespace cutie
