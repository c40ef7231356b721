// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cutie/param_registry.hpp"
#include "cutie/tensor.hpp"

namespace cutie {

struct ObjectTransformerConfig {
  std::size_t channels = 256;    // C
  std::size_t num_queries = 16;  // N, first half foreground, second half background
  std::size_t num_blocks = 3;    // L
  std::size_t num_heads = 8;
  std::size_t ffn_hidden = 2048; // query FFN hidden size (8C)

  void validate() const;
};

struct BlockOutput {
  Tensor queries;   // X_l, N x C
  Tensor pixels;    // R_l, HW x C
  Tensor aux_mask;  // M_l, HW, in (0, 1)
  Tensor attention; // head-mean masked cross-attention weights, N x HW
  std::vector<Tensor> attention_heads;
};

struct PositionalEmbeddings {
  Tensor queries; // P_X = E_X + f_ObjEmbed(S)
  Tensor pixels;  // P_R = R_sin + f_PixEmbed(R_0)
};

struct ObjectTransformerOutput {
  Tensor readout; // R_L, HW x C
  Tensor queries; // X_L, N x C
  std::vector<BlockOutput> blocks;

  std::vector<Tensor> aux_masks() const;
};

/// L blocks of: foreground/background masked cross-attention (pixels -> queries),
/// query self-attention, query FFN, reverse cross-attention (queries -> pixels)
/// and a convolutional pixel FFN with channel attention. Pre-LN residual
/// sub-layers, except the pixel FFN which has no normalization.
class ObjectTransformer {
public:
  ObjectTransformer(const ParamRegistry &registry, ObjectTransformerConfig config,
                    std::string prefix = "object_transformer");

  static void register_parameters(ParamRegistry &registry, ParamInitializer &init,
                                  const ObjectTransformerConfig &config,
                                  const std::string &prefix = "object_transformer");

  const ObjectTransformerConfig &config() const noexcept { return config_; }

  /// M_l = sigmoid(linear(R_{l-1})), HW.
  Tensor predict_aux_mask(const Tensor &pixels, std::size_t block) const;

  PositionalEmbeddings embeddings(const Tensor &object_memory, const Tensor &initial_readout,
                                  std::size_t h, std::size_t w) const;

  /// One block on token matrices; `h x w` is the pixel grid of `pixels`.
  BlockOutput block(std::size_t index, const Tensor &queries, const Tensor &pixels,
                    const PositionalEmbeddings &pos, std::size_t h, std::size_t w) const;

  /// Runs block `index` from scratch given the object memory S and R_0.
  BlockOutput transformer_block(const Tensor &queries, const Tensor &pixels, const Tensor &object_memory,
                                const Tensor &initial_readout, std::size_t index, std::size_t h,
                                std::size_t w) const;

  /// X_0 = X + S; returns R_L (== R_0 bitwise when L = 0).
  ObjectTransformerOutput forward(const Tensor &initial_readout, const Tensor &object_memory, std::size_t h,
                                  std::size_t w) const;

private:
  std::string name(std::size_t block, const char *leaf) const;

  const ParamRegistry &registry_;
  ObjectTransformerConfig config_;
  std::string prefix_;
};

} // namespace cutie
