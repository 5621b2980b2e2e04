#pragma once

#include <stdexcept>
#include <string>

namespace jiadf {

// Root of every error thrown by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or width mismatch between operands, parameters or records.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf values, degenerate probabilities, tolerance failures.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed input files, invalid dataset specs, missing splits.
class DataError : public Error {
 public:
  using Error::Error;
};

// Checkpoint container problems (version, truncation, config mismatch).
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Graph misuse: non-scalar loss, backward twice.
class GraphError : public Error {
 public:
  using Error::Error;
};

}  // namespace jiadf
