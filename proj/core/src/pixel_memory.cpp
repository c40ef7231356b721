// SPDX-License-Identifier: Apache-2.0
#include "cutie/pixel_memory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cutie/layers.hpp"
#include "cutie/tensor_ops.hpp"

namespace cutie {

PixelMemoryBank::PixelMemoryBank(std::size_t t_max) : t_max_(t_max) {
  if (t_max_ == 0) {
    throw ConfigError("pixel memory: t_max must be at least 1");
  }
}

void PixelMemoryBank::insert(MemoryFrame frame, bool permanent) {
  if (frame.key.rank() != 2) {
    throw DimensionError("pixel memory: key must be HW x Ck, got " + shape_to_string(frame.key.shape()));
  }
  const std::size_t hw = frame.key.dim(0);
  if (frame.shrinkage.numel() != hw) {
    throw DimensionError("pixel memory: shrinkage has " + std::to_string(frame.shrinkage.numel()) +
                         " entries for " + std::to_string(hw) + " pixels");
  }
  for (const Tensor &v : frame.values) {
    if (v.rank() != 2 || v.dim(0) != hw) {
      throw DimensionError("pixel memory: value " + shape_to_string(v.shape()) + " for " + std::to_string(hw) +
                           " pixels");
    }
  }
  if (frames_.empty() && !ever_inserted_) {
    hw_ = hw;
    key_channels_ = frame.key.dim(1);
    num_lanes_ = frame.values.size();
  } else {
    if (hw != hw_ || frame.key.dim(1) != key_channels_) {
      throw DimensionError("pixel memory: frame key " + shape_to_string(frame.key.shape()) +
                           " does not match bank " + shape_to_string({hw_, key_channels_}));
    }
    if (frame.values.size() != num_lanes_) {
      throw DimensionError("pixel memory: frame has " + std::to_string(frame.values.size()) +
                           " value lanes, bank has " + std::to_string(num_lanes_));
    }
  }
  frame.pinned = permanent || !ever_inserted_;
  ever_inserted_ = true;
  if (frames_.size() >= t_max_) {
    auto victim = std::find_if(frames_.begin(), frames_.end(), [](const MemoryFrame &f) { return !f.pinned; });
    if (victim != frames_.end()) {
      frames_.erase(victim);
    }
  }
  frames_.push_back(std::move(frame));
}

std::vector<std::pair<std::size_t, bool>> PixelMemoryBank::introspect() const {
  std::vector<std::pair<std::size_t, bool>> out;
  out.reserve(frames_.size());
  for (const MemoryFrame &f : frames_) {
    out.emplace_back(f.frame_index, f.pinned);
  }
  return out;
}

namespace {

Tensor stack_rows(const std::vector<const Tensor *> &parts, std::size_t width) {
  std::size_t rows = 0;
  for (const Tensor *p : parts) {
    rows += p->numel() / std::max<std::size_t>(width, 1);
  }
  Tensor out(width == 1 ? Shape{rows} : Shape{rows, width});
  float *dst = out.ptr();
  for (const Tensor *p : parts) {
    dst = std::copy(p->values().begin(), p->values().end(), dst);
  }
  return out;
}

} // namespace

Tensor PixelMemoryBank::keys() const {
  std::vector<const Tensor *> parts;
  for (const MemoryFrame &f : frames_) {
    parts.push_back(&f.key);
  }
  return stack_rows(parts, key_channels_);
}

Tensor PixelMemoryBank::shrinkage() const {
  std::vector<const Tensor *> parts;
  for (const MemoryFrame &f : frames_) {
    parts.push_back(&f.shrinkage);
  }
  return stack_rows(parts, 1);
}

Tensor PixelMemoryBank::values(std::size_t lane) const {
  if (lane >= num_lanes_) {
    throw DimensionError("pixel memory: lane " + std::to_string(lane) + " out of range");
  }
  std::vector<const Tensor *> parts;
  for (const MemoryFrame &f : frames_) {
    parts.push_back(&f.values[lane]);
  }
  const std::size_t width = frames_.empty() ? 0 : frames_.front().values[lane].dim(1);
  Tensor out = stack_rows(parts, width);
  return width == 1 ? std::move(out).reshaped({out.numel(), 1}) : out;
}

void PixelMemoryBank::insert_lane(std::size_t position, std::size_t value_channels) {
  if (position > num_lanes_) {
    throw DimensionError("pixel memory: lane position " + std::to_string(position) + " out of range");
  }
  for (MemoryFrame &f : frames_) {
    f.values.insert(f.values.begin() + static_cast<std::ptrdiff_t>(position), Tensor({hw_, value_channels}));
  }
  ++num_lanes_;
}

Tensor similarity(const Tensor &query, const Tensor &selection, const Tensor &keys, const Tensor &shrinkage) {
  if (query.rank() != 2 || keys.rank() != 2 || query.dim(1) != keys.dim(1)) {
    throw DimensionError("similarity: query " + shape_to_string(query.shape()) + " vs keys " +
                         shape_to_string(keys.shape()));
  }
  if (selection.shape() != query.shape()) {
    throw DimensionError("similarity: selection " + shape_to_string(selection.shape()) + " vs query " +
                         shape_to_string(query.shape()));
  }
  const std::size_t hw = query.dim(0), thw = keys.dim(0), ck = query.dim(1);
  if (shrinkage.numel() != thw) {
    throw DimensionError("similarity: shrinkage has " + std::to_string(shrinkage.numel()) + " entries for " +
                         std::to_string(thw) + " keys");
  }
  Tensor out({hw, thw});
  for (std::size_t i = 0; i < hw; ++i) {
    const float *qi = query.ptr() + i * ck;
    const float *ei = selection.ptr() + i * ck;
    float *row = out.ptr() + i * thw;
    for (std::size_t j = 0; j < thw; ++j) {
      const float *kj = keys.ptr() + j * ck;
      double acc = 0.0;
      for (std::size_t c = 0; c < ck; ++c) {
        const double diff = static_cast<double>(kj[c]) - static_cast<double>(qi[c]);
        acc += static_cast<double>(ei[c]) * diff * diff;
      }
      row[j] = static_cast<float>(-static_cast<double>(shrinkage[j]) * acc);
    }
  }
  return out;
}

Tensor affinity(const Tensor &logits, std::size_t top_k) {
  if (logits.rank() != 2) {
    throw DimensionError("affinity: logits must be HW x THW");
  }
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  const std::size_t k = std::clamp<std::size_t>(top_k, 1, std::max<std::size_t>(cols, 1));
  Tensor out({rows, cols});
  if (cols == 0) {
    return out;
  }
  std::vector<std::size_t> order(cols);
  std::vector<double> weights(k);
  for (std::size_t r = 0; r < rows; ++r) {
    const float *row = logits.ptr() + r * cols;
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto better = [row](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); };
    if (k < cols) {
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
    }
    double max_v = row[order[0]];
    for (std::size_t t = 1; t < k; ++t) {
      max_v = std::max(max_v, static_cast<double>(row[order[t]]));
    }
    double sum = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
      weights[t] = std::exp(static_cast<double>(row[order[t]]) - max_v);
      sum += weights[t];
    }
    float *dst = out.ptr() + r * cols;
    for (std::size_t t = 0; t < k; ++t) {
      dst[order[t]] = static_cast<float>(weights[t] / sum);
    }
  }
  return out;
}

Tensor pixel_readout(const ParamRegistry &registry, const Tensor &affinity, const Tensor &values,
                     const Tensor &hidden_tokens, std::size_t h, std::size_t w, const std::string &prefix) {
  Tensor readout = matmul(affinity, values);
  add_inplace(readout, hidden_tokens);
  Tensor map = tokens_to_map(readout, h, w);
  map = residual_block(registry, prefix + ".fuse.block0", map, true);
  map = residual_block(registry, prefix + ".fuse.block1", map, true);
  return map_to_tokens(map);
}

Tensor sensory_update(const ParamRegistry &registry, const Tensor &hidden, const MultiScaleFeatures &features,
                      const std::string &prefix) {
  Tensor input = conv(registry, prefix + ".sensory.proj16", features.stride16);
  add_inplace(input, conv(registry, prefix + ".sensory.proj8", area_downsample(features.stride8, 2)));
  add_inplace(input, conv(registry, prefix + ".sensory.proj4", area_downsample(features.stride4, 4)));
  return conv_gru_update(registry, prefix + ".sensory.gru", hidden, input);
}

Tensor deep_update(const ParamRegistry &registry, const Tensor &hidden, const Tensor &mask_features,
                   const std::string &prefix) {
  return conv_gru_update(registry, prefix + ".deep.gru", hidden, mask_features);
}

void register_pixel_memory_parameters(ParamRegistry &registry, ParamInitializer &init, std::size_t channels,
                                      std::size_t decoder_channels, const std::string &prefix) {
  register_residual_block(registry, init, prefix + ".fuse.block0", channels, channels, true);
  register_residual_block(registry, init, prefix + ".fuse.block1", channels, channels, true);
  register_conv(registry, init, prefix + ".sensory.proj16", channels, channels, 1);
  register_conv(registry, init, prefix + ".sensory.proj8", decoder_channels, channels, 1);
  register_conv(registry, init, prefix + ".sensory.proj4", decoder_channels, channels, 1);
  register_conv_gru(registry, init, prefix + ".sensory.gru", channels, channels);
  register_conv_gru(registry, init, prefix + ".deep.gru", channels, channels);
}

} // namespace cutie
