#pragma once

namespace reduction {

// Numerical thresholds shared by every module. All are overridable from the
// run configuration.
struct ToleranceSet {
  double hermiticity = 1e-10;
  double trace = 1e-10;
  double psd = 1e-9;
  double matrix = 1e-9;
  // Relative to max |E_r|.
  double reconstruction = 1e-8;
  // Relative to max(1, max |E|); single-linkage merge threshold.
  double degeneracy = 1e-8;
  double luders_floor = 1e-12;
  // Most negative eigenvalue a post-step repair may clamp away.
  double clamp = 1e-6;
};

}  // namespace reduction
