#pragma once

#include <stdexcept>
#include <string>

namespace zoomrl {

// Invalid configuration values or mismatched artifacts (checkpoint vs dataset).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite logits, ratios or gradients.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OutOfBounds : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace zoomrl
