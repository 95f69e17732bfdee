#include "hmmorder/errors.hpp"

namespace hmmorder {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonIrreducible: return "NonIrreducible";
    case ErrorKind::SolverFailure: return "SolverFailure";
    case ErrorKind::InvalidParams: return "InvalidParams";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::OutOfDomain: return "OutOfDomain";
    case ErrorKind::QuadratureNotConverged: return "QuadratureNotConverged";
    case ErrorKind::OptimizerDiverged: return "OptimizerDiverged";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::EmptyGrid: return "EmptyGrid";
    case ErrorKind::NegativeSlope: return "NegativeSlope";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::DegenerateRegression: return "DegenerateRegression";
    case ErrorKind::IllConditioned: return "IllConditioned";
    case ErrorKind::ComplexEigenvalues: return "ComplexEigenvalues";
    case ErrorKind::MissingCache: return "MissingCache";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

}  // namespace hmmorder
