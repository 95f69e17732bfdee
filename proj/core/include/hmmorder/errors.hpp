#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hmmorder {

enum class ErrorKind {
  NonIrreducible,
  SolverFailure,
  InvalidParams,
  DimensionMismatch,
  OutOfDomain,
  QuadratureNotConverged,
  OptimizerDiverged,
  IndexOutOfRange,
  EmptyGrid,
  NegativeSlope,
  InsufficientData,
  DegenerateRegression,
  IllConditioned,
  ComplexEigenvalues,
  MissingCache,
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; callers dispatch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace hmmorder
