#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace blockattn {

// Contract violation by the caller (bad arguments, invalid state).
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Position / length exceeds a configured limit.
struct RangeError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// On-disk file is malformed, truncated, or has the wrong version.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A cached artifact does not match the model that produced it.
struct StalenessError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace blockattn
