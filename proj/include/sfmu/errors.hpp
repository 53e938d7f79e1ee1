#pragma once

#include <stdexcept>
#include <string>

namespace sfmu {

// Error hierarchy. The CLI maps each family to a distinct exit code:
// UsageError -> 1, DataError -> 2, NumericError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// data
class BadMagic : public DataError {
 public:
  using DataError::DataError;
};
class TruncatedFile : public DataError {
 public:
  using DataError::DataError;
};
class LabelOutOfRange : public DataError {
 public:
  using DataError::DataError;
};
class FileNotFound : public DataError {
 public:
  using DataError::DataError;
};
class FractionOutOfRange : public UsageError {
 public:
  using UsageError::UsageError;
};
class EmptyIndexSet : public UsageError {
 public:
  using UsageError::UsageError;
};

// numerics
class DimensionMismatch : public NumericError {
 public:
  using NumericError::NumericError;
};
class NotPositiveDefinite : public NumericError {
 public:
  using NumericError::NumericError;
};
class NotConverged : public NumericError {
 public:
  using NumericError::NumericError;
};
class SingularSystem : public NumericError {
 public:
  using NumericError::NumericError;
};
class DegenerateBound : public NumericError {
 public:
  using NumericError::NumericError;
};
class DivergenceDetected : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace sfmu
