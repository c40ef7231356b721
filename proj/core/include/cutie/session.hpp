// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "cutie/image.hpp"
#include "cutie/network.hpp"
#include "cutie/object_memory.hpp"
#include "cutie/pixel_memory.hpp"
#include "cutie/preprocess.hpp"

namespace cutie {

inline constexpr std::size_t kDefaultMemoryInterval = 5;
inline constexpr std::size_t kDefaultMaxShortEdge = 480;

struct InferenceConfig {
  std::size_t mem_interval = kDefaultMemoryInterval; // r
  std::size_t t_max = kDefaultMaxMemoryFrames;
  std::size_t top_k = kDefaultTopK;
  std::size_t max_short_edge = kDefaultMaxShortEdge;
  /// Run per-object lanes on separate threads. Results are identical either way.
  bool parallel_lanes = true;

  void validate() const;
  bool operator==(const InferenceConfig &) const = default;
};

/// Intermediate values of one object lane, recorded on request.
struct LaneTrace {
  std::uint8_t id = 0;
  Tensor initial_readout;          // R_0, hw x C
  Tensor final_readout;            // R_L, hw x C
  std::vector<Tensor> attention;   // per block, N x hw, averaged over heads
  std::vector<Tensor> aux_masks;   // per block, hw
};

struct StepTrace {
  std::size_t frame_index = 0;
  std::size_t h = 0, w = 0; // stride-16 grid
  Tensor affinity;          // hw x THW
  bool memorized = false;
  std::vector<LaneTrace> lanes;
};

/// Streaming driver. Owns both memories for every object and advances one
/// frame per call to add_reference or step. Not thread-safe; distinct
/// sessions may share one network.
class InferenceSession {
public:
  InferenceSession(std::shared_ptr<const SegmentationNetwork> network, InferenceConfig config = {});

  /// Encodes a user-provided mask for the current frame into both memories.
  /// The first reference is pinned, as is any reference marked permanent.
  /// Labels not seen before register new objects. The mask must have the
  /// image's dimensions.
  void add_reference(const Image &image, const LabelMap &mask, bool permanent = false);

  /// Segments the current frame. Throws StateError before the first reference.
  LabelMap step(const Image &image, StepTrace *trace = nullptr);

  std::size_t frame_index() const noexcept { return frame_index_; }
  bool has_reference() const noexcept { return has_reference_; }
  const std::vector<std::uint8_t> &object_ids() const noexcept { return ids_; }
  const PixelMemoryBank &bank() const noexcept { return bank_; }
  const ObjectMemory &object_memory(std::uint8_t id) const;
  const Tensor &hidden(std::uint8_t id) const;
  const InferenceConfig &config() const noexcept { return config_; }
  const SegmentationNetwork &network() const noexcept { return *network_; }
  std::optional<WorkingSize> working() const { return working_; }

private:
  struct Lane {
    ObjectMemory memory;
    Tensor hidden; // C x h x w
  };

  std::size_t lane_of(std::uint8_t id) const;
  void check_frame(std::size_t height, std::size_t width);
  void memorize(const Tensor &image, const QueryFeatures &query, const std::vector<Tensor> &masks,
                bool permanent, bool deep_update);

  std::shared_ptr<const SegmentationNetwork> network_;
  InferenceConfig config_;
  PixelMemoryBank bank_;
  std::vector<std::uint8_t> ids_;
  std::vector<Lane> lanes_;
  std::optional<WorkingSize> working_;
  std::size_t original_h_ = 0, original_w_ = 0;
  Tensor pos_embedding_; // R_sin at stride 16, hw x C
  std::size_t frame_index_ = 0;
  bool has_reference_ = false;
};

} // namespace cutie
