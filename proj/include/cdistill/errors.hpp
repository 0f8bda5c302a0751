#pragma once

#include <stdexcept>

namespace cdistill {

/// Invalid state/token ids, malformed tables and other caller mistakes.
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Rejected configuration (bad hyperparameters, unknown keys, schema errors).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Exhaustive enumeration would exceed its leaf cap.
struct SizeError : std::length_error {
  using std::length_error::length_error;
};

}  // namespace cdistill
