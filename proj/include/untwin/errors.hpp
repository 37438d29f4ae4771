#pragma once

#include <stdexcept>

namespace untwin {

struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An untwinning request would remove every participant.
struct NothingRemains : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InsufficientSamples : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace untwin
