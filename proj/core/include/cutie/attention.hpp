// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "cutie/param_registry.hpp"
#include "cutie/tensor.hpp"

namespace cutie {

struct MultiHeadAttentionConfig {
  std::size_t model_dim = 256;
  std::size_t n_heads = 8;

  std::size_t head_dim() const { return model_dim / n_heads; }
  /// Throws ConfigError unless n_heads divides model_dim.
  void validate() const;
};

/// Non-owning view of the four projections of one attention layer.
template <typename T>
struct AttentionWeights {
  const BasicTensor<T> *q_weight = nullptr;
  const BasicTensor<T> *q_bias = nullptr;
  const BasicTensor<T> *k_weight = nullptr;
  const BasicTensor<T> *k_bias = nullptr;
  const BasicTensor<T> *v_weight = nullptr;
  const BasicTensor<T> *v_bias = nullptr;
  const BasicTensor<T> *out_weight = nullptr;
  const BasicTensor<T> *out_bias = nullptr;
};

/// Everything the backward pass needs from one forward call.
template <typename T>
struct AttentionCache {
  BasicTensor<T> q_in, k_in, v_in;
  BasicTensor<T> q, k, v;
  BasicTensor<T> mask; // empty when unmasked
  std::vector<BasicTensor<T>> probs;
  BasicTensor<T> heads;
  std::size_t n_heads = 0;
};

template <typename T>
struct AttentionResult {
  BasicTensor<T> output;
  /// Per-head attention weights, each nq x nk.
  std::vector<BasicTensor<T>> probs;
};

/// Scaled dot-product attention over n_heads heads, followed by the output
/// projection. `mask` (nq x nk, entries 0 or -inf) may be null and is shared by
/// all heads. No residual is added here.
template <typename T>
AttentionResult<T> attention_forward(const AttentionWeights<T> &weights, const BasicTensor<T> &q_in,
                                     const BasicTensor<T> &k_in, const BasicTensor<T> &v_in,
                                     const BasicTensor<T> *mask, std::size_t n_heads,
                                     AttentionCache<T> *cache = nullptr);

/// Binds `<name>.{q,k,v,out}_proj.{weight,bias}` from a registry.
AttentionWeights<float> attention_weights(const ParamRegistry &registry, std::string_view name);

/// Registry-backed multi-head attention (no residual).
AttentionResult<float> multi_head_attention(const ParamRegistry &registry, std::string_view name,
                                            const Tensor &q, const Tensor &k, const Tensor &v,
                                            const Tensor *mask, const MultiHeadAttentionConfig &cfg);

/// Mean of the per-head weights, nq x nk.
template <typename T>
BasicTensor<T> head_mean(const std::vector<BasicTensor<T>> &probs);

} // namespace cutie
