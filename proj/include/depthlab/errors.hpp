#pragma once

#include <stdexcept>
#include <string>

namespace depthlab {

// Invalid configuration, shape mismatch or violated precondition.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A loss or gradient became non-finite. The message names the offending op.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace depthlab
