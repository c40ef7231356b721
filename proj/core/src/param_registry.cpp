// SPDX-License-Identifier: Apache-2.0
#include "cutie/param_registry.hpp"

#include <cmath>

namespace cutie {

void ParamRegistry::add(std::string name, Tensor value) {
  if (frozen_) {
    throw StateError("cannot register '" + name + "': registry is frozen");
  }
  if (name.empty()) {
    throw ConfigError("parameter name must not be empty");
  }
  auto [it, inserted] = entries_.emplace(std::move(name), std::move(value));
  if (!inserted) {
    throw ConfigError("duplicate parameter name '" + it->first + "'");
  }
}

const Tensor &ParamRegistry::get(std::string_view name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw MissingParameterError("missing parameter '" + std::string(name) + "'");
  }
  return it->second;
}

Tensor &ParamRegistry::mutable_get(std::string_view name) {
  if (frozen_) {
    throw StateError("registry is frozen; '" + std::string(name) + "' is read-only");
  }
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw MissingParameterError("missing parameter '" + std::string(name) + "'");
  }
  return it->second;
}

std::size_t ParamRegistry::parameter_count() const {
  std::size_t total = 0;
  for (const auto &[name, t] : entries_) {
    total += t.numel();
  }
  return total;
}

bool bitwise_equal(const ParamRegistry &a, const ParamRegistry &b) {
  if (a.entries_.size() != b.entries_.size()) {
    return false;
  }
  auto ib = b.entries_.begin();
  for (const auto &[name, t] : a.entries_) {
    if (name != ib->first || !bitwise_equal(t, ib->second)) {
      return false;
    }
    ++ib;
  }
  return true;
}

Tensor ParamInitializer::truncated_normal(Shape shape, double stddev) {
  Tensor out(std::move(shape));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (float &v : out.values()) {
    double z = dist(engine_);
    while (std::abs(z) > 2.0) {
      z = dist(engine_);
    }
    v = static_cast<float>(z * stddev);
  }
  return out;
}

Tensor ParamInitializer::kaiming_normal(Shape shape, std::size_t fan_in) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in == 0 ? 1 : fan_in));
  return truncated_normal(std::move(shape), stddev);
}

} // namespace cutie
