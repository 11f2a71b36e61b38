#pragma once

#include <stdexcept>
#include <string>

namespace prf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: malformed files, failed validation, missing paths. The CLI maps
/// these to exit code 2.
class InputError : public Error {
 public:
  using Error::Error;
};

}  // namespace prf
