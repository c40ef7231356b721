// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cutie {

/// Root of every exception thrown by the engine.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not line up for the requested operation.
class DimensionError : public Error {
public:
  using Error::Error;
};

/// Invalid static configuration (odd query count, head count not dividing C, ...).
class ConfigError : public Error {
public:
  using Error::Error;
};

class MissingParameterError : public Error {
public:
  using Error::Error;
};

/// Operation invoked in the wrong lifecycle state (stale cache, uninitialized session).
class StateError : public Error {
public:
  using Error::Error;
};

/// Bad user-supplied data (unreadable frame, mask of the wrong size).
class InputError : public Error {
public:
  using Error::Error;
};

/// Malformed file: bad magic, version, CRC or pixel format.
class FormatError : public Error {
public:
  using Error::Error;
};

/// A weight file whose parameter set does not match the model configuration.
class CompatibilityError : public Error {
public:
  CompatibilityError(const std::string &message, std::vector<std::string> offenders)
      : Error(message), offenders_(std::move(offenders)) {}

  const std::vector<std::string> &offenders() const noexcept { return offenders_; }

private:
  std::vector<std::string> offenders_;
};

} // namespace cutie
