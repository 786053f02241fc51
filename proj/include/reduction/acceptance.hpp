#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "reduction/config.hpp"

namespace reduction {

// Reference instances for the acceptance suite.
//   A: H = diag(0, 1),    rho0 = [[1/2, 1/4], [1/4, 1/2]]
//   B: H = diag(0, 1, 2), rho0 = diag(1/4, 1/4, 1/2) plus complex coherences
//   C: H = diag(0, 0, 1), rho0 = diag(0.3, 0.3, 0.4) plus coherences between
//      the degenerate block and the upper level
// sigma = hbar = 1 and dt = 1e-3 throughout.
RunConfig reference_instance(char name);

struct CriterionResult {
  int id = 0;
  std::string claim;
  std::string measured;
  std::string threshold;
  bool passed = false;
  double seconds = 0.0;
};

struct AcceptanceOptions {
  // Scratch space for the byte-identity criterion.
  std::filesystem::path work_dir = std::filesystem::temp_directory_path() / "reduction_lab_acceptance";
  // Empty runs every criterion.
  std::vector<int> only;
};

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options = {});

/// One line per criterion: id, verdict, claim, measured, threshold, seconds.
void print_acceptance(std::ostream& out, const std::vector<CriterionResult>& results);

}  // namespace reduction
