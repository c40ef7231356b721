// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "cutie/network.hpp"
#include "cutie/session.hpp"

namespace cutie {

/// Every constant needed to reproduce a run. Serialization is canonical:
/// sorted keys, fixed indentation, so equal manifests produce equal bytes.
struct RunManifest {
  ModelConfig model;
  InferenceConfig inference;
  std::optional<std::uint64_t> seed; // set for random-init runs
  std::string weights;               // weight file path, empty for random init
  std::string engine_version;

  RunManifest();
  RunManifest(ModelConfig model, InferenceConfig inference);

  std::string to_json() const;
  static RunManifest from_json(const std::string &text);
  bool operator==(const RunManifest &) const = default;
};

} // namespace cutie
