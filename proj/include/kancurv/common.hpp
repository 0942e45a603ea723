#pragma once

#include <random>
#include <stdexcept>
#include <string>

namespace kancurv {

// Bad user-supplied configuration (grid specs, penalty settings, experiment files).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dimension mismatch between data and model.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value encountered during evaluation or training.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

using Rng = std::mt19937_64;

}  // namespace kancurv
