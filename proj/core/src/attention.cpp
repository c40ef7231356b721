// SPDX-License-Identifier: Apache-2.0
#include "cutie/attention.hpp"

#include <cmath>
#include <string>

#include "cutie/tensor_ops.hpp"

namespace cutie {

void MultiHeadAttentionConfig::validate() const {
  if (n_heads == 0 || model_dim % n_heads != 0) {
    throw ConfigError("attention: " + std::to_string(n_heads) + " heads do not divide model dim " +
                      std::to_string(model_dim));
  }
}

namespace {

template <typename T>
BasicTensor<T> project(const BasicTensor<T> &x, const BasicTensor<T> &weight, const BasicTensor<T> &bias) {
  BasicTensor<T> out = matmul_bt(x, weight);
  add_row_bias(out, bias);
  return out;
}

template <typename T>
BasicTensor<T> head_slice(const BasicTensor<T> &x, std::size_t head, std::size_t head_dim) {
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  BasicTensor<T> out({rows, head_dim});
  for (std::size_t r = 0; r < rows; ++r) {
    const T *src = x.ptr() + r * cols + head * head_dim;
    std::copy(src, src + head_dim, out.ptr() + r * head_dim);
  }
  return out;
}

} // namespace

template <typename T>
AttentionResult<T> attention_forward(const AttentionWeights<T> &weights, const BasicTensor<T> &q_in,
                                     const BasicTensor<T> &k_in, const BasicTensor<T> &v_in,
                                     const BasicTensor<T> *mask, std::size_t n_heads,
                                     AttentionCache<T> *cache) {
  if (q_in.rank() != 2 || k_in.rank() != 2 || v_in.rank() != 2) {
    throw DimensionError("attention: inputs must be token matrices");
  }
  if (k_in.dim(0) != v_in.dim(0)) {
    throw DimensionError("attention: " + std::to_string(k_in.dim(0)) + " keys but " +
                         std::to_string(v_in.dim(0)) + " values");
  }
  const std::size_t nq = q_in.dim(0), nk = k_in.dim(0);
  if (mask != nullptr && mask->shape() != Shape{nq, nk}) {
    throw DimensionError("attention: mask shape " + shape_to_string(mask->shape()) + " for " +
                         std::to_string(nq) + " queries and " + std::to_string(nk) + " keys");
  }

  BasicTensor<T> q = project(q_in, *weights.q_weight, *weights.q_bias);
  BasicTensor<T> k = project(k_in, *weights.k_weight, *weights.k_bias);
  BasicTensor<T> v = project(v_in, *weights.v_weight, *weights.v_bias);
  const std::size_t dim = q.dim(1);
  if (k.dim(1) != dim || v.dim(1) != dim) {
    throw DimensionError("attention: projected widths differ");
  }
  MultiHeadAttentionConfig{dim, n_heads}.validate();
  const std::size_t head_dim = dim / n_heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));

  AttentionResult<T> result;
  result.probs.reserve(n_heads);
  BasicTensor<T> heads({nq, dim});
  for (std::size_t h = 0; h < n_heads; ++h) {
    const BasicTensor<T> qh = head_slice(q, h, head_dim);
    const BasicTensor<T> kh = head_slice(k, h, head_dim);
    const BasicTensor<T> vh = head_slice(v, h, head_dim);
    BasicTensor<T> logits = matmul_bt(qh, kh);
    for (T &x : logits.values()) {
      x *= scale;
    }
    BasicTensor<T> probs = mask ? masked_softmax_rows(logits, *mask) : softmax_rows(logits);
    const BasicTensor<T> oh = matmul(probs, vh);
    for (std::size_t r = 0; r < nq; ++r) {
      std::copy(oh.ptr() + r * head_dim, oh.ptr() + (r + 1) * head_dim, heads.ptr() + r * dim + h * head_dim);
    }
    result.probs.push_back(std::move(probs));
  }
  result.output = project(heads, *weights.out_weight, *weights.out_bias);

  if (cache != nullptr) {
    cache->q_in = q_in;
    cache->k_in = k_in;
    cache->v_in = v_in;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->mask = mask ? *mask : BasicTensor<T>{};
    cache->probs = result.probs;
    cache->heads = std::move(heads);
    cache->n_heads = n_heads;
  }
  return result;
}

AttentionWeights<float> attention_weights(const ParamRegistry &registry, std::string_view name) {
  const std::string base(name);
  AttentionWeights<float> w;
  w.q_weight = &registry.get(base + ".q_proj.weight");
  w.q_bias = &registry.get(base + ".q_proj.bias");
  w.k_weight = &registry.get(base + ".k_proj.weight");
  w.k_bias = &registry.get(base + ".k_proj.bias");
  w.v_weight = &registry.get(base + ".v_proj.weight");
  w.v_bias = &registry.get(base + ".v_proj.bias");
  w.out_weight = &registry.get(base + ".out_proj.weight");
  w.out_bias = &registry.get(base + ".out_proj.bias");
  return w;
}

AttentionResult<float> multi_head_attention(const ParamRegistry &registry, std::string_view name,
                                            const Tensor &q, const Tensor &k, const Tensor &v,
                                            const Tensor *mask, const MultiHeadAttentionConfig &cfg) {
  cfg.validate();
  if (q.rank() != 2 || q.dim(1) != cfg.model_dim) {
    throw DimensionError("multi_head_attention: queries " + shape_to_string(q.shape()) +
                         " do not match model dim " + std::to_string(cfg.model_dim));
  }
  return attention_forward(attention_weights(registry, name), q, k, v, mask, cfg.n_heads);
}

template <typename T>
BasicTensor<T> head_mean(const std::vector<BasicTensor<T>> &probs) {
  if (probs.empty()) {
    return {};
  }
  BasicTensor<T> out(probs.front().shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    double sum = 0.0;
    for (const auto &p : probs) {
      sum += p[i];
    }
    out[i] = static_cast<T>(sum / static_cast<double>(probs.size()));
  }
  return out;
}

template AttentionResult<float> attention_forward(const AttentionWeights<float> &, const Tensor &,
                                                  const Tensor &, const Tensor &, const Tensor *,
                                                  std::size_t, AttentionCache<float> *);
template AttentionResult<double> attention_forward(const AttentionWeights<double> &, const TensorD &,
                                                   const TensorD &, const TensorD &, const TensorD *,
                                                   std::size_t, AttentionCache<double> *);
template Tensor head_mean(const std::vector<Tensor> &);
template TensorD head_mean(const std::vector<TensorD> &);

} // namespace cutie
