// SPDX-License-Identifier: Apache-2.0
#include "cutie/masked_attention.hpp"

#include <cmath>
#include <string>

#include "cutie/tensor_ops.hpp"

namespace cutie {

template <typename T>
BasicTensor<T> build_attention_mask(const BasicTensor<T> &aux_mask, std::size_t num_queries) {
  if (num_queries == 0 || num_queries % 2 != 0) {
    throw ConfigError("attention mask needs an even, nonzero query count; got " + std::to_string(num_queries));
  }
  const std::size_t hw = aux_mask.numel();
  const std::size_t half = num_queries / 2;
  BasicTensor<T> mask({num_queries, hw});
  for (std::size_t q = 0; q < num_queries; ++q) {
    const bool foreground_query = q < half;
    T *row = mask.ptr() + q * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      const bool foreground_pixel = aux_mask[i] >= T(0.5);
      row[i] = foreground_query == foreground_pixel ? T{0} : kMaskedOut<T>;
    }
  }
  return mask;
}

template <typename T>
CrossAttentionParams<T> CrossAttentionParams<T>::random(std::size_t dim, std::mt19937_64 &rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  auto fill = [&](Shape shape) {
    BasicTensor<T> t(std::move(shape));
    for (T &v : t.values()) {
      v = static_cast<T>(dist(rng));
    }
    return t;
  };
  CrossAttentionParams p;
  p.q_weight = fill({dim, dim});
  p.q_bias = fill({dim});
  p.k_weight = fill({dim, dim});
  p.k_bias = fill({dim});
  p.v_weight = fill({dim, dim});
  p.v_bias = fill({dim});
  p.out_weight = fill({dim, dim});
  p.out_bias = fill({dim});
  return p;
}

template <typename T>
MaskedCrossAttention<T>::MaskedCrossAttention(CrossAttentionParams<T> params, std::size_t n_heads)
    : params_(std::move(params)), n_heads_(n_heads) {
  MultiHeadAttentionConfig{params_.q_weight.dim(0), n_heads_}.validate();
}

template <typename T>
CrossAttentionParams<T> &MaskedCrossAttention<T>::mutable_params() noexcept {
  ++version_;
  return params_;
}

template <typename T>
BasicTensor<T> MaskedCrossAttention<T>::forward(const BasicTensor<T> &queries, const BasicTensor<T> &pixels,
                                                const BasicTensor<T> &mask, const BasicTensor<T> &query_pos,
                                                const BasicTensor<T> &pixel_pos) {
  if (queries.shape() != query_pos.shape() || pixels.shape() != pixel_pos.shape()) {
    throw DimensionError("masked cross-attention: positional embeddings must match their features");
  }
  const BasicTensor<T> q_in = add(queries, query_pos);
  const BasicTensor<T> k_in = add(pixels, pixel_pos);
  AttentionResult<T> result = attention_forward(params_.view(), q_in, k_in, pixels, &mask, n_heads_, &cache_);
  has_cache_ = true;
  cached_version_ = version_;
  add_inplace(result.output, queries);
  return std::move(result.output);
}

template <typename T>
const std::vector<BasicTensor<T>> &MaskedCrossAttention<T>::attention() const {
  if (!has_cache_) {
    throw StateError("masked cross-attention: no forward pass recorded");
  }
  return cache_.probs;
}

namespace {

template <typename T>
BasicTensor<T> column_sums(const BasicTensor<T> &x) {
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> acc(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      acc[c] += x[r * cols + c];
    }
  }
  BasicTensor<T> out({cols});
  for (std::size_t c = 0; c < cols; ++c) {
    out[c] = static_cast<T>(acc[c]);
  }
  return out;
}

template <typename T>
BasicTensor<T> columns(const BasicTensor<T> &x, std::size_t first, std::size_t count) {
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  BasicTensor<T> out({rows, count});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(x.ptr() + r * cols + first, x.ptr() + r * cols + first + count, out.ptr() + r * count);
  }
  return out;
}

template <typename T>
void set_columns(BasicTensor<T> &dst, const BasicTensor<T> &src, std::size_t first) {
  const std::size_t rows = dst.dim(0), cols = dst.dim(1), count = src.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(src.ptr() + r * count, src.ptr() + (r + 1) * count, dst.ptr() + r * cols + first);
  }
}

} // namespace

template <typename T>
CrossAttentionGradients<T> MaskedCrossAttention<T>::backward(const BasicTensor<T> &upstream) const {
  if (!has_cache_ || cached_version_ != version_) {
    throw StateError("masked cross-attention: backward needs a forward pass with the current parameters");
  }
  const AttentionCache<T> &c = cache_;
  if (upstream.shape() != c.q_in.shape()) {
    throw DimensionError("masked cross-attention: upstream " + shape_to_string(upstream.shape()) +
                         " does not match output " + shape_to_string(c.q_in.shape()));
  }
  const std::size_t nq = c.q.dim(0), nk = c.k.dim(0), dim = c.q.dim(1);
  const std::size_t head_dim = dim / n_heads_;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));

  CrossAttentionGradients<T> g;
  // Output projection.
  g.params.out_weight = matmul_at(upstream, c.heads);
  g.params.out_bias = column_sums(upstream);
  const BasicTensor<T> d_heads = matmul(upstream, params_.out_weight);

  BasicTensor<T> dq({nq, dim}), dk({nk, dim}), dv({nk, dim});
  for (std::size_t h = 0; h < n_heads_; ++h) {
    const std::size_t first = h * head_dim;
    const BasicTensor<T> d_out = columns(d_heads, first, head_dim);
    const BasicTensor<T> qh = columns(c.q, first, head_dim);
    const BasicTensor<T> kh = columns(c.k, first, head_dim);
    const BasicTensor<T> vh = columns(c.v, first, head_dim);
    const BasicTensor<T> &probs = c.probs[h];

    const BasicTensor<T> d_probs = matmul_bt(d_out, vh);
    set_columns(dv, matmul_at(probs, d_out), first);

    // Softmax Jacobian; masked entries have p = 0 and drop out.
    BasicTensor<T> d_logits({nq, nk});
    for (std::size_t r = 0; r < nq; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < nk; ++j) {
        dot += static_cast<double>(probs[r * nk + j]) * static_cast<double>(d_probs[r * nk + j]);
      }
      for (std::size_t j = 0; j < nk; ++j) {
        const double p = probs[r * nk + j];
        d_logits[r * nk + j] = static_cast<T>(p * (static_cast<double>(d_probs[r * nk + j]) - dot) * scale);
      }
    }
    set_columns(dq, matmul(d_logits, kh), first);
    set_columns(dk, matmul_at(d_logits, qh), first);
  }

  g.params.q_weight = matmul_at(dq, c.q_in);
  g.params.q_bias = column_sums(dq);
  g.params.k_weight = matmul_at(dk, c.k_in);
  g.params.k_bias = column_sums(dk);
  g.params.v_weight = matmul_at(dv, c.v_in);
  g.params.v_bias = column_sums(dv);

  const BasicTensor<T> d_q_in = matmul(dq, params_.q_weight);
  const BasicTensor<T> d_k_in = matmul(dk, params_.k_weight);
  const BasicTensor<T> d_v_in = matmul(dv, params_.v_weight);

  g.queries = add(upstream, d_q_in);
  g.query_pos = d_q_in;
  g.pixels = add(d_k_in, d_v_in);
  g.pixel_pos = d_k_in;
  return g;
}

template Tensor build_attention_mask(const Tensor &, std::size_t);
template TensorD build_attention_mask(const TensorD &, std::size_t);
template struct CrossAttentionParams<float>;
template struct CrossAttentionParams<double>;
template class MaskedCrossAttention<float>;
template class MaskedCrossAttention<double>;

} // namespace cutie
