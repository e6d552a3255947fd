#pragma once

#include <stdexcept>
#include <string>

namespace svmixer {

// Root of every error the library raises. The CLI maps the three direct
// subclasses onto its exit codes (config 2, data 3, check 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid hyperparameters, unparseable or unknown config keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data: files, trial lists, shapes that do not
// agree with the model they are fed to.
class DataError : public Error {
 public:
  using Error::Error;
};

// A verification step (gradient check, census comparison) found a mismatch.
class CheckError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

// NaN or Inf produced by an op.
class NumericalError : public DataError {
 public:
  using DataError::DataError;
};

// Binary/text file problems: bad magic, unknown version, truncation, CRC.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ConfigMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace svmixer
