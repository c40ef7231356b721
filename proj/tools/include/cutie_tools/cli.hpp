// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cutie::tools {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitMissingInput = 2;
inline constexpr int kExitIncompatibleWeights = 3;
inline constexpr int kExitFailure = 4;

/// Batch propagation front end. `args` excludes the program name.
///
///   --frames DIR --first-mask FILE (--weights FILE | --random-init SEED) --out DIR
///   [--mem-interval 5] [--t-max 5] [--top-k 30] [--max-short-edge 480]
///   [--gt DIR] [--report FILE] [--dump-attention DIR]
///
/// Frames are the PNG files in DIR in lexicographic order; the first one is
/// annotated by --first-mask. Writes <stem>.png per frame and manifest.json
/// into --out.
int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace cutie::tools
