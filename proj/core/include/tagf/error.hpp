// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace tagf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform to an op's rule.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An op produced NaN or Inf, or a loss became non-finite during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A precondition on an argument or call sequence was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Audio and visual streams are not frame-aligned.
class AlignmentError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated, or incompatible data / checkpoint files, or too few
/// valid frames for a statistic.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures; the message always carries the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace tagf
