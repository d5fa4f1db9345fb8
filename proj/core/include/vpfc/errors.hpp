#pragma once

#include <stdexcept>
#include <string>

namespace vpfc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes, parameters or files that do not fit together.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared. Carries the location when one is known
/// (layer/head are -1 otherwise).
class NumericError : public Error {
 public:
  NumericError(const std::string& what, int layer = -1, int head = -1)
      : Error(what), layer_(layer), head_(head) {}

  int layer() const noexcept { return layer_; }
  int head() const noexcept { return head_; }

 private:
  int layer_;
  int head_;
};

/// Malformed or version-mismatched on-disk data.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace vpfc
