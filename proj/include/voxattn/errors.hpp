#pragma once

#include <stdexcept>
#include <string>

namespace voxattn {

// Shape or size disagreement between tensors handed to a kernel.
class DimensionError : public std::runtime_error {
public:
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structurally invalid configuration (bad strides, collapsed extents, ...).
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Operation issued against uninitialized or inconsistent mutable state.
class StateError : public std::runtime_error {
public:
  explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed on-disk input (volume file, manifest, checkpoint, config).
class ParseError : public std::runtime_error {
public:
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem-level failure (unreadable / unwritable path).
class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required (NaN loss and friends).
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace voxattn
