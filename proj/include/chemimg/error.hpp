#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace chemimg {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for malformed or unsupported input data (SMILES, CSV, labels).
class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

/// A binary quantity needs both classes and only one is present.
class SingleClass : public DataError {
 public:
  explicit SingleClass(const std::string& where = "AUC")
      : DataError("SingleClass: " + where + " needs at least one positive and one negative label") {}
};

}  // namespace chemimg
