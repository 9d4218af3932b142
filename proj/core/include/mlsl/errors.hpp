#pragma once

#include <stdexcept>
#include <string>

namespace mlsl {

/// Rect/shape violations (out-of-bounds crops, mismatched grids).
class GeometryError : public std::runtime_error {
 public:
  explicit GeometryError(const std::string& what) : std::runtime_error(what) {}
};

/// A class index outside [0, C) where IGNORE is not permitted.
class InvalidLabelError : public std::runtime_error {
 public:
  explicit InvalidLabelError(const std::string& what) : std::runtime_error(what) {}
};

/// File and serialization failures.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Bad configuration values or malformed config files.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite loss or gradients during optimization.
class DivergedError : public std::runtime_error {
 public:
  explicit DivergedError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mlsl
