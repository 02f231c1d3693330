#pragma once

#include <stdexcept>
#include <string>

namespace collagan {

/// Bad configuration or command-line usage.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed, missing or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace collagan
