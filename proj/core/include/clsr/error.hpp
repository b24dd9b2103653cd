#pragma once

#include <stdexcept>
#include <string>

namespace clsr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unsupported image data (PNG decode, base64).
class DecodeError : public Error {
 public:
  using Error::Error;
};

/// A box or index that falls outside the tensor it addresses.
class BoundsError : public Error {
 public:
  using Error::Error;
};

/// Mismatched tensor shapes or sizes that violate an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid or mutually inconsistent configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient encountered during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace clsr
