#pragma once

#include <stdexcept>
#include <string>

namespace prood {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or layer shapes do not compose.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file (checkpoint, IDX, cache).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or argument value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// The activation pattern along a ray did not stabilize within the search range.
class RegionNotReached : public Error {
 public:
  using Error::Error;
};

}  // namespace prood
