#pragma once

#include <stdexcept>
#include <string>

namespace siamdepth {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf detected, or a numeric precondition (positive depth, sigma > 0) violated.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values or unknown config keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable, malformed or inconsistent files.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace siamdepth
