// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>

#include "cutie/object_transformer.hpp"
#include "cutie/param_registry.hpp"
#include "cutie/pixel_memory.hpp"
#include "cutie/tensor.hpp"

namespace cutie {

struct ModelConfig {
  std::size_t channels = 256;     // C
  std::size_t key_channels = 64;  // C_k
  std::size_t num_blocks = 3;     // L
  std::size_t num_queries = 16;   // N
  std::size_t num_heads = 8;
  std::size_t ffn_hidden = 2048;
  std::size_t decoder_channels = 128;
  std::size_t stem_channels = 32;
  std::array<std::size_t, 3> encoder_channels{64, 128, 256}; // strides 4, 8, 16

  void validate() const;
  ObjectTransformerConfig transformer() const;
  bool operator==(const ModelConfig &) const = default;
};

/// Query-encoder output for one frame at working resolution H x W.
struct QueryFeatures {
  std::size_t height = 0, width = 0; // input resolution
  std::size_t h = 0, w = 0;           // stride-16 grid
  Tensor f4, f8, f16;       // E_i x (H/s) x (W/s)
  Tensor key;               // hw x Ck
  Tensor shrinkage;         // hw, >= 1
  Tensor selection;         // hw x Ck, in (0, 1)
};

struct DecoderOutput {
  Tensor logits; // H x W
  MultiScaleFeatures features;
};

/// Parameter layout (name -> shape) implied by a config.
using ParameterLayout = std::map<std::string, Shape, std::less<>>;

ParameterLayout parameter_layout(const ModelConfig &config);

/// Throws CompatibilityError naming every missing, unknown or mis-shaped
/// parameter.
void check_compatibility(const ParamRegistry &registry, const ModelConfig &config);

/// Frozen registry with every parameter of the model randomly initialized.
ParamRegistry build_parameters(const ModelConfig &config, std::uint64_t seed);

class SegmentationNetwork {
public:
  SegmentationNetwork(ParamRegistry registry, ModelConfig config);

  static SegmentationNetwork random(const ModelConfig &config, std::uint64_t seed);

  const ParamRegistry &registry() const noexcept { return registry_; }
  const ModelConfig &config() const noexcept { return config_; }
  ObjectTransformer transformer() const { return ObjectTransformer(registry_, config_.transformer()); }

  /// image: 3 x H x W normalized, H and W multiples of 16.
  QueryFeatures encode_query(const Tensor &image) const;

  /// Memory value v (C x h x w) for one object. target and others are H x W
  /// soft masks; query_f16 is the query-encoder stride-16 feature.
  Tensor encode_mask(const Tensor &image, const Tensor &target, const Tensor &others,
                     const Tensor &query_f16) const;

  /// readout: hw x C tokens (R_L). Logits come back at the input resolution.
  DecoderOutput decode(const Tensor &readout, const QueryFeatures &query) const;

private:
  struct Pyramid {
    Tensor f4, f8, f16;
  };
  Pyramid backbone(const std::string &prefix, const Tensor &x) const;

  struct Trusted {};
  SegmentationNetwork(ParamRegistry registry, ModelConfig config, Trusted);

  ParamRegistry registry_;
  ModelConfig config_;
};

} // namespace cutie
