#pragma once

#include <stdexcept>
#include <string>

namespace pcrec {

// Base of every error the library throws. `exit_code()` is what the CLI
// returns when the error escapes: 1 for contract/config problems, 2 for I/O.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

#define PCREC_DEFINE_ERROR(Name, Base)   \
  class Name : public Base {             \
   public:                               \
    using Base::Base;                    \
  };

PCREC_DEFINE_ERROR(EmptyGraph, Error)
PCREC_DEFINE_ERROR(NodeNotFound, Error)
PCREC_DEFINE_ERROR(ShapeError, Error)
PCREC_DEFINE_ERROR(NumericError, Error)
PCREC_DEFINE_ERROR(ConfigError, Error)
PCREC_DEFINE_ERROR(ContractError, Error)
PCREC_DEFINE_ERROR(NoNegativeAvailable, Error)
#undef PCREC_DEFINE_ERROR

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

// Readable file, unusable content.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace pcrec
