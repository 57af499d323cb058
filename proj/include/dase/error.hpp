#pragma once

#include <stdexcept>
#include <string>

namespace dase {

// Error taxonomy. The CLI maps each family onto a distinct exit code:
// UsageError -> 2, DataError -> 3, NumericError -> 4.

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

/// Bad magic, version or otherwise unrecognized file layout.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// Header and payload disagree.
class CorruptError : public DataError {
 public:
  using DataError::DataError;
};

/// Statistic is mathematically undefined for the given input.
class UndefinedError : public DataError {
 public:
  using DataError::DataError;
};

class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

class WriteError : public DataError {
 public:
  using DataError::DataError;
};

/// Invalid layer or curriculum configuration (group divisibility, wiring, ordering).
class ConfigError : public UsageError {
 public:
  using UsageError::UsageError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};


}  // namespace dase
