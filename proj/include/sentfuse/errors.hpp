// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace sentfuse {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dimension / shape violations at op boundaries.
struct ShapeError : Error {
  using Error::Error;
};

// Malformed files (bad magic, truncation, dim mismatch vs manifest).
struct FormatError : Error {
  using Error::Error;
};

// Invalid configuration values.
struct ConfigError : Error {
  using Error::Error;
};

// Missing or inconsistent dataset content.
struct DataError : Error {
  using Error::Error;
};

// Backward over a graph that was already consumed.
struct GraphError : Error {
  using Error::Error;
};

// API misuse (non-scalar loss, out-of-order pipeline stages, ...).
struct ContractError : Error {
  using Error::Error;
};

}  // namespace sentfuse
