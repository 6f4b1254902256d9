#pragma once

#include <stdexcept>
#include <string>

namespace ctxmt {

// Base for all errors raised by the library. CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid input data or configuration (malformed corpus record, bad config
// bounds, misaligned scoring runs, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Filesystem problems: missing path, unreadable file, unwritable output.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ctxmt
