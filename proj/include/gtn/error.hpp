#pragma once

#include <stdexcept>
#include <string>

namespace gtn {

/// Base class for all errors thrown by this library.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dimension/shape mismatch between operands. Messages include both shapes.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// Invalid argument value (bounds, rates, labels out of range).
class ValueError : public Error {
public:
  using Error::Error;
};

/// Operation invoked in the wrong state, e.g. backward before forward.
class StateError : public Error {
public:
  using Error::Error;
};

/// A NaN or infinity appeared where a finite value is required.
class NumericError : public Error {
public:
  using Error::Error;
};

/// File or stream I/O failure, including checksum mismatches.
class IoError : public Error {
public:
  using Error::Error;
};

/// Malformed or inconsistent configuration.
class ConfigError : public Error {
public:
  using Error::Error;
};

}  // namespace gtn
