#pragma once

#include <stdexcept>
#include <string>

namespace crosspref {

// Base of every error raised by the library. The subclasses map one-to-one
// onto the command-line exit codes (1 usage, 2 data, 3 numeric).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments, bad configuration, unknown names.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or other numeric breakdown during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace crosspref
