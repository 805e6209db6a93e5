#pragma once

#include <stdexcept>
#include <string>

namespace hpl {

// Invalid arguments, shape mismatches, bad configs.
struct ParamError : std::invalid_argument {
  explicit ParamError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Corrupt or inconsistent data on disk (manifests, checkpoints, corpora).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values, failed invariants of numerical routines.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / serialization failures.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hpl
