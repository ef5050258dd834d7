#pragma once

#include <stdexcept>
#include <string>

namespace radet {

// Error families. Each maps onto one CLI exit code (see io/exit_codes.hpp).

/// Invalid configuration: bad dimensions, unknown keys, inconsistent shapes.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input outside the mathematical domain of an operation.
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or a diverged computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File or stream failure, including malformed binary formats.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace radet
