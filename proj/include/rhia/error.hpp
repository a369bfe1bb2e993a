#pragma once

#include <stdexcept>
#include <string>

namespace rhia {

// Base of every failure raised by the library. The CLI maps the subclasses
// onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad flags, unknown config keys, malformed plans.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Unreadable or inconsistent input files, checkpoint mismatches.
class DataError : public Error {
 public:
  using Error::Error;
};

// Shape mismatches, NaN inputs, diverged training, failed gradient checks.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace rhia
