// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "cutie/attention.hpp"
#include "cutie/tensor.hpp"

namespace cutie {

/// Foreground/background additive mask, N x HW. Rows [0, N/2) may attend only
/// to pixels with M(i) >= 0.5; rows [N/2, N) only to pixels with M(i) < 0.5.
template <typename T>
BasicTensor<T> build_attention_mask(const BasicTensor<T> &aux_mask, std::size_t num_queries);

/// Owned weights of one pixel-to-query cross-attention layer.
template <typename T>
struct CrossAttentionParams {
  BasicTensor<T> q_weight, q_bias, k_weight, k_bias, v_weight, v_bias, out_weight, out_bias;

  AttentionWeights<T> view() const {
    return {&q_weight, &q_bias, &k_weight, &k_bias, &v_weight, &v_bias, &out_weight, &out_bias};
  }
  /// Gaussian weights and biases with the given standard deviation.
  static CrossAttentionParams random(std::size_t dim, std::mt19937_64 &rng, double stddev);
};

template <typename T>
struct CrossAttentionGradients {
  BasicTensor<T> queries;       // dL/dX
  BasicTensor<T> pixels;        // dL/dR
  BasicTensor<T> query_pos;     // dL/dP_X
  BasicTensor<T> pixel_pos;     // dL/dP_R
  CrossAttentionParams<T> params;
};

/// X' = softmax(mask + Q K^T / sqrt(d)) V W_o^T + b_o + X, with
/// Q = (X + P_X) W_q^T + b_q, K = (R + P_R) W_k^T + b_k, V = R W_v^T + b_v,
/// evaluated per head. Caches the forward state so backward() can return
/// analytic gradients for every input and projection.
template <typename T>
class MaskedCrossAttention {
public:
  MaskedCrossAttention(CrossAttentionParams<T> params, std::size_t n_heads);

  const CrossAttentionParams<T> &params() const noexcept { return params_; }
  /// Any mutable access invalidates the cached forward state.
  CrossAttentionParams<T> &mutable_params() noexcept;
  std::size_t n_heads() const noexcept { return n_heads_; }

  BasicTensor<T> forward(const BasicTensor<T> &queries, const BasicTensor<T> &pixels,
                         const BasicTensor<T> &mask, const BasicTensor<T> &query_pos,
                         const BasicTensor<T> &pixel_pos);

  /// Throws StateError without a forward() since the last parameter change.
  CrossAttentionGradients<T> backward(const BasicTensor<T> &upstream) const;

  /// Per-head attention weights of the last forward call.
  const std::vector<BasicTensor<T>> &attention() const;

private:
  CrossAttentionParams<T> params_;
  std::size_t n_heads_;
  AttentionCache<T> cache_;
  std::uint64_t version_ = 0;
  std::uint64_t cached_version_ = 0;
  bool has_cache_ = false;
};

} // namespace cutie
