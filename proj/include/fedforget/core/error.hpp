#pragma once

#include <stdexcept>
#include <string>

namespace ff {

// Violated precondition or shape/arch mismatch.
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Bad or unknown configuration value.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Dataset files missing or malformed.
struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PartitionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite loss or gradient.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Normalisation of an all-zero attention map is undefined.
struct DegenerateInputError : std::domain_error {
  using std::domain_error::domain_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define FF_EXPECT(cond, Err, msg)                                              \
  do {                                                                         \
    if (!(cond)) throw Err(std::string(msg));                                  \
  } while (0)

}  // namespace ff
