// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace raterbayes {

/// Base class for every error raised by the library. Each subclass maps to
/// one process exit code of the command-line tool.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
  virtual const char* kind() const noexcept { return "error"; }
};

/// Invalid configuration value or inconsistent settings.
class ConfigError : public Error {
public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
  const char* kind() const noexcept override { return "config error"; }
};

/// API misuse (calling backward twice, non-scalar loss, ...).
class UsageError : public Error {
public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
  const char* kind() const noexcept override { return "usage error"; }
};

/// Malformed, missing or inconsistent input data.
class DataError : public Error {
public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
  const char* kind() const noexcept override { return "data error"; }
};

/// Filesystem failure.
class IoError : public DataError {
public:
  using DataError::DataError;
  const char* kind() const noexcept override { return "i/o error"; }
};

/// Tensor shapes that do not fit together.
class DimensionError : public DataError {
public:
  using DataError::DataError;
  const char* kind() const noexcept override { return "dimension error"; }
};

/// Non-finite values or an undefined numerical quantity.
class NumericError : public Error {
public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
  const char* kind() const noexcept override { return "numeric error"; }
};

/// A clinical measurement that is undefined for the given masks.
class MeasurementError : public NumericError {
public:
  using NumericError::NumericError;
  const char* kind() const noexcept override { return "measurement error"; }
};

} // namespace raterbayes
