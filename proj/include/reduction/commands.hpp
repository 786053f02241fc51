#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "reduction/config.hpp"
#include "reduction/ensemble.hpp"
#include "reduction/sde.hpp"

namespace reduction {

/// printf "%.17g".
std::string format_double(double x);

/// t, H_t, V_t, purity, xi, W, pi_1..pi_D, |R_n_m| (n < m). Without xi and W
/// when `with_noise` is false (mean-state output).
std::vector<std::string> trajectory_header(std::size_t levels, bool with_noise = true);
void write_trajectory_csv(std::ostream& out, const Trajectory& traj, bool with_noise = true);

/// t, then <series>_mean and <series>_stderr for every series of the source.
void write_ensemble_csv(std::ostream& out, const EnsembleSummary& summary, const SourceSummary& source);

/// Config echo (without the thread count), seed, verdicts, fitted statistics.
std::string summary_json(const EnsembleSummary& summary, const RunConfig& cfg);

struct SimulatedPaths {
  std::vector<std::pair<Mode, Trajectory>> trajectories;
};

/// One realization per requested mode; for Both the integrator is driven by
/// the Brownian motion recovered from the closed form's information path.
SimulatedPaths simulate(const RunConfig& cfg, const Model& model);

/// Writes trajectory_<mode>.csv files into cfg.output_dir.
std::vector<std::filesystem::path> cmd_simulate(const RunConfig& cfg);

struct EnsembleOutput {
  EnsembleSummary summary;
  std::vector<std::filesystem::path> files;
};

/// Writes summary.json and ensemble_<source>.csv into cfg.output_dir.
EnsembleOutput cmd_ensemble(const RunConfig& cfg);

/// Writes lindblad.csv (mean-state ODE) into cfg.output_dir.
std::filesystem::path cmd_lindblad(const RunConfig& cfg);

}  // namespace reduction
