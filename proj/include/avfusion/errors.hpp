// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace avfusion {

/// Malformed configuration or input files; maps to CLI exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Violated operation precondition (shape mismatch, bad index, non-scalar
/// objective, degenerate mask, ...).
class ContractError : public std::invalid_argument {
 public:
  explicit ContractError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Shape mismatch between operands; message names both shapes.
class ShapeError : public ContractError {
 public:
  explicit ShapeError(const std::string& msg) : ContractError(msg) {}
};

/// Numerical failure at runtime (NaN loss, undefined statistic); CLI exit 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace avfusion
