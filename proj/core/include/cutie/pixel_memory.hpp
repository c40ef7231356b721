// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "cutie/param_registry.hpp"
#include "cutie/tensor.hpp"

namespace cutie {

inline constexpr std::size_t kDefaultTopK = 30;
inline constexpr std::size_t kDefaultMaxMemoryFrames = 5;

/// One encoded memory frame. Keys and shrinkage depend only on the image and
/// are shared by all objects; values are per object lane.
struct MemoryFrame {
  std::size_t frame_index = 0;
  Tensor key;                 // HW x Ck
  Tensor shrinkage;           // HW, each >= 1
  std::vector<Tensor> values; // per lane, HW x C
  bool pinned = false;
};

/// Working memory with first-frame pinning and FIFO eviction. The first frame
/// ever inserted is pinned, as is any frame inserted as permanent. When the
/// bank holds `t_max` frames, the oldest unpinned frame is evicted before the
/// new one is appended. If every resident frame is pinned nothing can be
/// evicted and the bank grows past `t_max`.
class PixelMemoryBank {
public:
  explicit PixelMemoryBank(std::size_t t_max = kDefaultMaxMemoryFrames);

  void insert(MemoryFrame frame, bool permanent = false);

  /// (frame_index, pinned) for every resident frame, oldest first.
  std::vector<std::pair<std::size_t, bool>> introspect() const;

  const std::vector<MemoryFrame> &frames() const noexcept { return frames_; }
  std::size_t size() const noexcept { return frames_.size(); }
  bool empty() const noexcept { return frames_.empty(); }
  std::size_t t_max() const noexcept { return t_max_; }
  std::size_t num_lanes() const noexcept { return num_lanes_; }
  std::size_t pixels_per_frame() const noexcept { return hw_; }

  /// Concatenated over frames: THW x Ck, THW, THW x C.
  Tensor keys() const;
  Tensor shrinkage() const;
  Tensor values(std::size_t lane) const;

  /// Adds an all-zero value lane for a newly registered object at `position`.
  void insert_lane(std::size_t position, std::size_t value_channels);

private:
  std::size_t t_max_;
  std::size_t num_lanes_ = 0;
  std::size_t hw_ = 0;
  std::size_t key_channels_ = 0;
  bool ever_inserted_ = false;
  std::vector<MemoryFrame> frames_;
};

/// Anisotropic L2 similarity, HW x THW:
///   d(q_i, k_j) = -s_j * sum_c e_ic (k_jc - q_ic)^2,
/// so d <= 0 with equality at an exact key match.
Tensor similarity(const Tensor &query, const Tensor &selection, const Tensor &keys, const Tensor &shrinkage);

/// Row softmax restricted to the top_k largest logits (ties resolved toward the
/// lower memory index); all other entries are 0. top_k is clamped to THW.
Tensor affinity(const Tensor &logits, std::size_t top_k);

/// R_0 = f_fuse(A v + h) with f_fuse = two C-wide residual blocks with channel
/// attention (`<prefix>.fuse.block{0,1}`). Returns HW x C tokens.
Tensor pixel_readout(const ParamRegistry &registry, const Tensor &affinity, const Tensor &values,
                     const Tensor &hidden_tokens, std::size_t h, std::size_t w,
                     const std::string &prefix = "pixel_memory");

/// Decoder features feeding the sensory GRU.
struct MultiScaleFeatures {
  Tensor stride16; // C x h x w
  Tensor stride8;  // D x 2h x 2w
  Tensor stride4;  // D x 4h x 4w
};

/// Area-downsamples the decoder features to stride 16, projects each to C with
/// 1x1 convs, sums them and runs the sensory GRU. hidden: C x h x w.
Tensor sensory_update(const ParamRegistry &registry, const Tensor &hidden, const MultiScaleFeatures &features,
                      const std::string &prefix = "pixel_memory");

/// Separate GRU driven by the mask-encoder output on memory-frame insertion.
Tensor deep_update(const ParamRegistry &registry, const Tensor &hidden, const Tensor &mask_features,
                   const std::string &prefix = "pixel_memory");

void register_pixel_memory_parameters(ParamRegistry &registry, ParamInitializer &init, std::size_t channels,
                                      std::size_t decoder_channels, const std::string &prefix = "pixel_memory");

} // namespace cutie
