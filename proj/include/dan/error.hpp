#pragma once

#include <stdexcept>
#include <string>

namespace dan {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A value is outside its admissible domain (labels, probabilities, non-finite losses).
class ValueError : public Error {
 public:
  using Error::Error;
};

// Run configuration is inconsistent or incomplete.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem or codec failure; the message names the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dan
