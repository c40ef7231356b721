// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>

#include "cutie/param_registry.hpp"
#include "cutie/tensor.hpp"

namespace cutie {

/// Rows of S with cumulative weight at or below this read as zero vectors.
inline constexpr double kObjectMemoryEps = 1e-8;

/// Object summary S (N x C) kept as running sums so that every update and read
/// costs the same regardless of how many memory frames came before:
///   sigma_S[q] += sum_i W_q(i) U(i),  sigma_W[q] += sum_i W_q(i),
///   S_q = sigma_S[q] / sigma_W[q].
/// A row whose pooling weights are all zero in a frame is left untouched.
class ObjectMemory {
public:
  ObjectMemory(std::size_t num_queries, std::size_t channels);

  /// U: HW x C object features, W: N x HW pooling weights from the same frame.
  void update(const Tensor &features, const Tensor &weights);
  Tensor read() const;

  const TensorD &sigma_s() const noexcept { return sigma_s_; }
  const TensorD &sigma_w() const noexcept { return sigma_w_; }
  std::size_t n_updates() const noexcept { return n_updates_; }
  std::size_t num_queries() const noexcept { return sigma_w_.numel(); }
  std::size_t channels() const noexcept { return sigma_s_.dim(1); }

private:
  TensorD sigma_s_;
  TensorD sigma_w_;
  std::size_t n_updates_ = 0;
};

/// U = f_ObjFeat(F): 2-layer C-wide MLP `<prefix>.feat_mlp` applied per pixel.
Tensor compute_object_feature(const ParamRegistry &registry, const Tensor &features,
                              const std::string &prefix = "object_memory");

/// Pooling masks W (N x HW). Foreground rows are zero where M < 0.5, background
/// rows zero where M >= 0.5; the remaining entries are
/// sigmoid(f_PoolWeight(F(i) + R_sin(i)))_q with `<prefix>.pool_mlp` (C -> N -> N).
/// `mask` must already be at the stride of F.
Tensor compute_pooling_masks(const ParamRegistry &registry, const Tensor &features, const Tensor &mask,
                             const Tensor &pos_embedding, std::size_t num_queries,
                             const std::string &prefix = "object_memory");

void register_object_memory_parameters(ParamRegistry &registry, ParamInitializer &init, std::size_t channels,
                                       std::size_t num_queries, const std::string &prefix = "object_memory");

} // namespace cutie
