#pragma once

#include <stdexcept>
#include <string>

namespace dittryon {

// Error hierarchy shared by every module. The CLI maps these onto exit codes.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or image shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced by a computation, or an ill-conditioned numeric result.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Argument outside its valid interval (timesteps, indices).
class RangeError : public Error {
 public:
  using Error::Error;
};

/// A garment specification that cannot be rasterized.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// A test oracle observed a non-deterministic function.
class OracleError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace dittryon
