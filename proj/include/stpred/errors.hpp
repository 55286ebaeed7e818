#pragma once

#include <stdexcept>
#include <string>

namespace stpred {

// Base class for every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration value or violated operation precondition.
struct ConfigError : Error {
  using Error::Error;
};

// Array shape mismatch between operands.
struct DimensionError : Error {
  using Error::Error;
};

// File could not be opened, read or written.
struct IoError : Error {
  using Error::Error;
};

// Sequence/checkpoint file violates the on-disk format. Each failure mode
// is a distinct type so callers can tell them apart.
struct FormatError : IoError {
  using IoError::IoError;
};
struct BadMagicError : FormatError {
  using FormatError::FormatError;
};
struct BadVersionError : FormatError {
  using FormatError::FormatError;
};
struct TruncatedError : FormatError {
  using FormatError::FormatError;
};
struct NonFiniteDataError : FormatError {
  using FormatError::FormatError;
};

// Simulation state became non-finite.
struct SimulationDivergedError : Error {
  using Error::Error;
};

// Training loss became non-finite; message carries epoch/batch context.
struct TrainingDivergedError : Error {
  using Error::Error;
};

// PSNR of a zero-MSE pair is undefined by contract.
struct UndefinedPsnrError : Error {
  using Error::Error;
};

// Checkpoint was written under a different model configuration.
struct DigestMismatchError : Error {
  using Error::Error;
};

// finite_diff_check hit a non-finite intermediate.
struct CheckFailedError : Error {
  using Error::Error;
};

}  // namespace stpred
