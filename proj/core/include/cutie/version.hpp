// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace cutie {

inline constexpr const char *kEngineVersion = "0.1.0";

} // namespace cutie
