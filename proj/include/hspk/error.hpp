#pragma once

#include <stdexcept>
#include <string>

namespace hspk {

// Base of every error raised by the library. The CLI maps subclasses onto
// process exit codes (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents or image sizes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed by a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A documented precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed or unsupported file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Requested allocation exceeds the configured budget.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Bad configuration value or unknown key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// 0 success, 2 usage/config, 3 data/format, 4 numeric abort.
inline int exit_code(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) return 2;
  if (dynamic_cast<const NumericError*>(&e) != nullptr) return 4;
  return 3;
}

}  // namespace hspk
