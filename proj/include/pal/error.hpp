#pragma once

#include <stdexcept>
#include <string>

namespace pal {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or layer geometry.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, degenerate divisors, degenerate maps.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the differentiation tape.
class TapeError : public Error {
 public:
  using Error::Error;
};

/// File access and file format problems.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration, manifest or model description.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace pal
