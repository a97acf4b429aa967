#pragma once

#include <stdexcept>
#include <string>

namespace sleeprad {

// Exception categories map one-to-one onto CLI exit codes.

/// Invalid configuration or parameters (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Missing, malformed or physically inconsistent input data (exit code 3).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Input that is well formed but contains nothing to work on (exit code 4).
class EmptyInputError : public std::runtime_error {
 public:
  explicit EmptyInputError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace sleeprad
