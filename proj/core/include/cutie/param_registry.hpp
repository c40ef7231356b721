// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>

#include "cutie/tensor.hpp"

namespace cutie {

/// Ordered name -> tensor store for every learned weight. Names are dotted
/// paths (`object_transformer.block0.cross_attn.q_proj.weight`) and form part
/// of the weight-file contract. Frozen registries are read-only.
class ParamRegistry {
public:
  using Map = std::map<std::string, Tensor, std::less<>>;

  explicit ParamRegistry(std::uint64_t seed = 0) : seed_(seed) {}

  void add(std::string name, Tensor value);
  const Tensor &get(std::string_view name) const;
  /// Throws StateError once frozen.
  Tensor &mutable_get(std::string_view name);
  bool contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }

  void freeze() noexcept { frozen_ = true; }
  bool frozen() const noexcept { return frozen_; }

  std::uint64_t seed() const noexcept { return seed_; }
  const Map &entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t parameter_count() const;

  friend bool bitwise_equal(const ParamRegistry &a, const ParamRegistry &b);

private:
  std::uint64_t seed_;
  bool frozen_ = false;
  Map entries_;
};

/// Deterministic weight initialization driven by one seed.
class ParamInitializer {
public:
  explicit ParamInitializer(std::uint64_t seed) : engine_(seed) {}

  /// Normal(0, std) resampled until within two standard deviations.
  Tensor truncated_normal(Shape shape, double stddev);
  /// He-normal for ReLU conv stacks: std = sqrt(2 / fan_in).
  Tensor kaiming_normal(Shape shape, std::size_t fan_in);

private:
  std::mt19937_64 engine_;
};

} // namespace cutie
