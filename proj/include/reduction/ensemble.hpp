#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "reduction/filtering.hpp"
#include "reduction/sde.hpp"
#include "reduction/spectral.hpp"
#include "reduction/tolerances.hpp"

namespace reduction {

enum class Mode { Sde, ClosedForm, Both };

std::string_view to_string(Mode mode);
/// Accepts "sde", "closed-form", "both"; throws ValidationError otherwise.
Mode parse_mode(std::string_view text);

/// Names accepted in EnsembleConfig::checks, in report order.
const std::vector<std::string>& known_checks();

/// Worker count: `requested` (0 means hardware concurrency), capped by
/// REDUCTION_LAB_THREADS when that is a positive integer.
std::size_t resolve_threads(std::size_t requested);

// Mergeable mean/variance accumulator (Chan et al. pairwise update).
struct RunningStat {
  std::size_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) noexcept;
  void merge(const RunningStat& other) noexcept;
  /// Sample variance; NaN below two observations.
  double variance() const noexcept;
  /// sqrt(variance / count); NaN below two observations.
  double standard_error() const noexcept;
};

struct EnsembleConfig {
  EnsembleConfig(HermitianOperator h, DensityMatrix rho, TimeGrid g)
      : hamiltonian(std::move(h)), rho0(std::move(rho)), grid(g) {}

  HermitianOperator hamiltonian;
  DensityMatrix rho0;
  TimeGrid grid;
  double sigma = 1.0;
  double hbar = 1.0;
  std::size_t n_paths = 1000;
  std::uint64_t base_seed = 0;
  Mode mode = Mode::ClosedForm;
  std::vector<std::string> checks = known_checks();
  double ci_multiplier = 3.0;
  // Statistics are kept every `record_every` steps and at t_max; 0 picks a
  // stride giving about 1000 points.
  std::size_t record_every = 0;
  std::size_t threads = 0;
  ToleranceSet tolerances{};
  std::vector<double> lindblad_times{0.5, 1.0, 2.0};
  // Decoherence fit window, in units of the expected decay time 8/(sigma dE)^2.
  double decoherence_efolds = 3.0;
  // Martingale check for Pi_nm stops once exp(-sigma^2 dE^2 t/8) falls below this.
  double pi_horizon_floor = 1e-2;
  double luders_distance_tol = 1e-4;
  double luders_purity_tol = 1e-3;

  // Corruptions for negative controls. drift_scale multiplies the signal
  // drift of xi; level_weights (one per level) tilt the sampled level
  // distribution away from tr(rho0 P_r).
  double drift_scale = 1.0;
  std::vector<double> level_weights;
};

struct Series {
  std::string name;
  std::vector<double> mean;
  std::vector<double> stderr_;
};

struct LevelOutcome {
  std::size_t count = 0;
  double mean_distance = std::numeric_limits<double>::quiet_NaN();
  double mean_purity = std::numeric_limits<double>::quiet_NaN();
  double expected_purity = 0.0;
};

struct MeanStateSample {
  double t = 0.0;
  ComplexMatrix mean;
  ComplexMatrix stderr_;  // real and imaginary parts estimated separately
  ComplexMatrix reference;
};

// Aggregates from one kind of trajectory (closed form or integrated SDE).
struct SourceSummary {
  std::string source;
  // H, V, purity, pi_r, Phi_n_m, Pi_n_m; indices are 1-based in names.
  std::vector<Series> series;
  std::vector<std::size_t> born_counts;
  std::vector<double> born_frequencies;
  double terminal_mean = 0.0;
  double terminal_mean_stderr = 0.0;
  double terminal_variance = 0.0;
  double terminal_variance_stderr = 0.0;
  std::vector<LevelOutcome> luders;
  std::vector<MeanStateSample> mean_states;

  const Series& find(std::string_view name) const;
};

struct CheckItem {
  std::string label;
  double measured = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

struct Verdict {
  std::string check;
  bool passed = false;
  // Worst item: largest measured/threshold ratio.
  double statistic = 0.0;
  double threshold = 0.0;
  std::string note;
  std::vector<CheckItem> items;
};

struct EnsembleSummary {
  std::size_t n_paths = 0;
  std::uint64_t base_seed = 0;
  Mode mode = Mode::ClosedForm;
  double sigma = 1.0;
  double ci_multiplier = 3.0;
  bool stderr_defined = false;
  std::vector<double> times;
  std::vector<double> energies;
  std::vector<double> prior;
  std::vector<LevelPair> pairs;
  // False where P_n rho0 P_m = 0; such pairs carry no coherence to check.
  std::vector<bool> coherent;
  double initial_energy = 0.0;
  double initial_variance = 0.0;
  double decoherence_efolds = 3.0;
  double pi_horizon_floor = 1e-2;
  double luders_distance_tol = 1e-4;
  double luders_purity_tol = 1e-3;
  double floor = 1e-12;

  // Closed-form aggregates come first when present; checks use sources[0].
  std::vector<SourceSummary> sources;
  std::vector<Verdict> verdicts;

  const SourceSummary& primary() const { return sources.front(); }
  bool all_passed() const;
};

/// Runs n_paths independent trajectories and evaluates the configured checks.
/// Results are bit-identical for a fixed seed whatever the thread count. A
/// failing path aborts the run with its index in the message.
EnsembleSummary run_ensemble(const EnsembleConfig& cfg);

Verdict check_born(const EnsembleSummary& summary);
Verdict check_martingales(const EnsembleSummary& summary);
Verdict check_variance_decay(const EnsembleSummary& summary);
Verdict check_decoherence(const EnsembleSummary& summary);
Verdict check_luders(const EnsembleSummary& summary);
Verdict check_lindblad(const EnsembleSummary& summary);
Verdict check_terminal_moments(const EnsembleSummary& summary);

/// Dispatches by name; throws ValidationError for an unknown check.
Verdict run_check(std::string_view name, const EnsembleSummary& summary);

/// Least-squares slope of log(mean) against t over the masked points.
struct DecoherenceFit {
  LevelPair pair;
  double slope = 0.0;
  double expected = 0.0;
  std::size_t points = 0;
};
std::vector<DecoherenceFit> fit_decoherence(const EnsembleSummary& summary);

}  // namespace reduction
