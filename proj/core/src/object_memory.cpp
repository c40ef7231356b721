// SPDX-License-Identifier: Apache-2.0
#include "cutie/object_memory.hpp"

#include "cutie/layers.hpp"
#include "cutie/tensor_ops.hpp"

namespace cutie {

ObjectMemory::ObjectMemory(std::size_t num_queries, std::size_t channels)
    : sigma_s_({num_queries, channels}), sigma_w_({num_queries}) {}

void ObjectMemory::update(const Tensor &features, const Tensor &weights) {
  const std::size_t n = num_queries(), c = channels();
  if (features.rank() != 2 || features.dim(1) != c) {
    throw DimensionError("object memory: features " + shape_to_string(features.shape()) + " for " +
                         std::to_string(c) + " channels");
  }
  const std::size_t hw = features.dim(0);
  if (weights.shape() != Shape{n, hw}) {
    throw DimensionError("object memory: pooling weights " + shape_to_string(weights.shape()) + ", expected " +
                         shape_to_string({n, hw}));
  }
  std::vector<double> acc(c);
  for (std::size_t q = 0; q < n; ++q) {
    const float *wq = weights.ptr() + q * hw;
    double wsum = 0.0;
    for (std::size_t i = 0; i < hw; ++i) {
      wsum += wq[i];
    }
    if (wsum == 0.0) {
      continue; // occluded in this frame: keep the row as is
    }
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t i = 0; i < hw; ++i) {
      const double wi = wq[i];
      if (wi == 0.0) {
        continue;
      }
      const float *u = features.ptr() + i * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        acc[ch] += wi * static_cast<double>(u[ch]);
      }
    }
    double *srow = sigma_s_.ptr() + q * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      srow[ch] += acc[ch];
    }
    sigma_w_[q] += wsum;
  }
  ++n_updates_;
}

Tensor ObjectMemory::read() const {
  const std::size_t n = num_queries(), c = channels();
  Tensor out({n, c});
  for (std::size_t q = 0; q < n; ++q) {
    if (!(sigma_w_[q] > kObjectMemoryEps)) {
      continue;
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      out[q * c + ch] = static_cast<float>(sigma_s_[q * c + ch] / sigma_w_[q]);
    }
  }
  return out;
}

Tensor compute_object_feature(const ParamRegistry &registry, const Tensor &features, const std::string &prefix) {
  return mlp_2layer(registry, prefix + ".feat_mlp", features);
}

Tensor compute_pooling_masks(const ParamRegistry &registry, const Tensor &features, const Tensor &mask,
                             const Tensor &pos_embedding, std::size_t num_queries, const std::string &prefix) {
  if (num_queries == 0 || num_queries % 2 != 0) {
    throw ConfigError("pooling masks need an even, nonzero query count");
  }
  if (features.rank() != 2 || mask.numel() != features.dim(0)) {
    throw DimensionError("pooling masks: mask has " + std::to_string(mask.numel()) + " pixels, features " +
                         shape_to_string(features.shape()));
  }
  const std::size_t hw = features.dim(0);
  const Tensor logits = mlp_2layer(registry, prefix + ".pool_mlp", add(features, pos_embedding));
  if (logits.dim(1) != num_queries) {
    throw DimensionError("pooling masks: pool MLP emits " + std::to_string(logits.dim(1)) + " values, expected " +
                         std::to_string(num_queries));
  }
  const std::size_t half = num_queries / 2;
  Tensor out({num_queries, hw});
  for (std::size_t i = 0; i < hw; ++i) {
    const bool foreground = mask[i] >= 0.5f;
    for (std::size_t q = 0; q < num_queries; ++q) {
      if ((q < half) != foreground) {
        continue;
      }
      out[q * hw + i] = sigmoid_scalar(logits[i * num_queries + q]);
    }
  }
  return out;
}

void register_object_memory_parameters(ParamRegistry &registry, ParamInitializer &init, std::size_t channels,
                                       std::size_t num_queries, const std::string &prefix) {
  register_mlp(registry, init, prefix + ".feat_mlp", channels, channels, channels);
  register_mlp(registry, init, prefix + ".pool_mlp", channels, num_queries, num_queries);
}

} // namespace cutie
