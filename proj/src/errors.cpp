#include "reduction/errors.hpp"

namespace reduction {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NotHermitian: return "NotHermitian";
    case ErrorKind::NotTraceOne: return "NotTraceOne";
    case ErrorKind::NotPositive: return "NotPositive";
    case ErrorKind::EigenSolverFailure: return "EigenSolverFailure";
    case ErrorKind::ZeroProbabilitySubspace: return "ZeroProbabilitySubspace";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::StepDivergence: return "StepDivergence";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::SameLevel: return "SameLevel";
    case ErrorKind::DegenerateDistribution: return "DegenerateDistribution";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::ValidationError: return "ValidationError";
  }
  return "Unknown";
}

LabError::LabError(ErrorKind kind, const std::string& message, double measured)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message),
      kind_(kind),
      message_(message),
      measured_(measured) {}

}  // namespace reduction
