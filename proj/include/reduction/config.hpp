#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "reduction/ensemble.hpp"
#include "reduction/spectral.hpp"
#include "reduction/tolerances.hpp"

namespace reduction {

// Run description read from a JSON document. Complex matrices are written as
// {"re": [[...], ...], "im": [[...], ...]} with row-major nested arrays; "im"
// may be omitted for real matrices. The Hamiltonian is either such a matrix
// or {"eigenvalues": [...], "basis": <unitary matrix>} with the basis
// optional (identity when absent).
struct RunConfig {
  std::vector<double> eigenvalues;               // eigenvalue form
  std::optional<ComplexMatrix> basis;            // eigenvalue form, columns are eigenvectors
  std::optional<ComplexMatrix> hamiltonian_matrix;  // matrix form
  ComplexMatrix rho0;
  double sigma = 1.0;
  double hbar = 1.0;
  std::optional<double> t_max;  // default_horizon when absent
  double dt = 1e-3;
  std::size_t record_every = 0;
  std::size_t n_paths = 1000;
  std::uint64_t seed = 0;
  Mode mode = Mode::ClosedForm;
  std::string output_dir = "out";
  std::vector<std::string> checks = known_checks();
  double ci_multiplier = 3.0;
  std::size_t threads = 0;
  ToleranceSet tolerances{};
  std::vector<double> lindblad_times{0.5, 1.0, 2.0};
  double decoherence_efolds = 3.0;
  double drift_scale = 1.0;
  std::vector<double> level_weights;

  ComplexMatrix hamiltonian() const;
};

/// Parses and validates. Syntax errors and schema violations (unknown key,
/// wrong type) raise ParseError naming the line or field; values that break
/// an invariant raise ValidationError, or the module error (NotHermitian,
/// NotPositive, ...) from building the operators.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::string& path);

/// JSON text that parse_config maps back to an equivalent RunConfig. With
/// `include_threads` false the thread count is left out, so the text depends
/// only on settings that change results.
std::string serialize_config(const RunConfig& cfg, bool include_threads = true);

struct Model {
  HermitianOperator hamiltonian;
  DensityMatrix rho0;
  SpectralDecomposition spec;
  TimeGrid grid;
};

/// Validated operators and the time grid (t_max resolved and rounded up to a
/// multiple of dt).
Model build_model(const RunConfig& cfg);

EnsembleConfig ensemble_config(const RunConfig& cfg, const Model& model);

}  // namespace reduction
