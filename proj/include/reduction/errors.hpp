#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace reduction {

enum class ErrorKind {
  NotHermitian,
  NotTraceOne,
  NotPositive,
  EigenSolverFailure,
  ZeroProbabilitySubspace,
  DimensionMismatch,
  StepDivergence,
  NonFiniteInput,
  SameLevel,
  DegenerateDistribution,
  ParseError,
  ValidationError,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library. `measured` carries the size of the
// violation when one exists (max deviation, trace error, eigenvalue, ...).
class LabError : public std::runtime_error {
 public:
  LabError(ErrorKind kind, const std::string& message, double measured = 0.0);

  ErrorKind kind() const noexcept { return kind_; }
  double measured() const noexcept { return measured_; }
  // what() without the leading kind name.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
  double measured_;
};

}  // namespace reduction
