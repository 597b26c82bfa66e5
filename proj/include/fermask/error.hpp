#pragma once

#include <stdexcept>
#include <string>

namespace fermask {

// Runtime failure: I/O, predictor process, numerical breakdown. CLI exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input data or configuration. CLI exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace fermask
