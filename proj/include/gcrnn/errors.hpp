// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace gcrnn {

/// Base class of every error the library throws. `exit_code()` is the CLI
/// status the error maps onto (1 usage/config, 2 data, 3 runtime).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 3; }
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 1; }
};

class FormatError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class ValidationError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class FusionError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace gcrnn
