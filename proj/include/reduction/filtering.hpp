#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "reduction/rng.hpp"
#include "reduction/sde.hpp"
#include "reduction/spectral.hpp"

namespace reduction {

// Closed-form solution of the reduction dynamics built from the information
// process xi_t = sigma t H + B_t, where the signal H is drawn from the
// spectrum with P[H = E_r] = tr(rho0 P_r) and B is an independent Brownian
// motion.

struct InformationPath {
  TimeGrid grid;
  std::size_t level = 0;
  double h_value = 0.0;
  std::vector<double> b;   // B_{t_k}
  std::vector<double> xi;  // sigma t_k H + B_{t_k}
  std::uint64_t seed = 0;
};

struct FilterWeights {
  // log p_r + sigma E_r xi - sigma^2 E_r^2 t / 2; -inf for empty levels.
  std::vector<double> log_weights;
  // Conditional level probabilities, normalized through log-sum-exp.
  std::vector<double> probabilities;
};

/// Categorical draw over levels with weights tr(rho0 P_r).
std::size_t sample_terminal_energy(const DensityMatrix& rho0, const SpectralDecomposition& spec, RandomStream& rng,
                                   const ToleranceSet& tols = {});
std::size_t sample_level(std::span<const double> probabilities, RandomStream& rng, const ToleranceSet& tols = {});

/// Draws B increments ~ Normal(0, dt) and forms xi. `drift_scale` multiplies
/// the signal drift; it exists only so tests can build corrupted paths.
InformationPath make_information_path(std::size_t level, const SpectralDecomposition& spec, double sigma,
                                      const TimeGrid& grid, RandomStream& rng, double drift_scale = 1.0);
InformationPath information_path_from_increments(std::size_t level, const SpectralDecomposition& spec, double sigma,
                                                 const TimeGrid& grid, std::span<const double> b_increments,
                                                 double drift_scale = 1.0);

FilterWeights filter_weights(const DensityMatrix& rho0, const SpectralDecomposition& spec, double sigma, double t,
                             double xi_t);
FilterWeights filter_weights(std::span<const double> prior, std::span<const double> energies, double sigma, double t,
                             double xi_t);

/// rho_t = K rho0 K^dagger / tr(...) with K = exp[-iHt/hbar + sigma H xi/2 - sigma^2 H^2 t/4],
/// evaluated in the eigenbasis with log-domain normalization.
DensityMatrix closed_form_state(const DensityMatrix& rho0, const SpectralDecomposition& spec, double sigma,
                                double hbar, double t, double xi_t, const ToleranceSet& tols = {});

/// Conditional mean energy sum_r pi_r(t) E_r.
double energy_estimate(const DensityMatrix& rho0, const SpectralDecomposition& spec, double sigma, double t,
                       double xi_t);

/// W_k = xi_k - sigma * sum_{j<k} H_{t_j} dt (left Riemann sum).
std::vector<double> recovered_brownian(const InformationPath& path, const DensityMatrix& rho0,
                                       const SpectralDecomposition& spec, double sigma);

struct PhiValue {
  double phi = 1.0;         // Phi_nm,t > 0
  double log_phi = 0.0;
  double martingale = 1.0;  // Pi_nm,t = Phi_nm,t exp(sigma^2 (E_n - E_m)^2 t / 8)
  Complex phase{1.0, 0.0};  // exp(-i (E_n - E_m) t / hbar)
};

/// Decoherence factor of the (n, m) coherence block. Throws SameLevel for n == m.
PhiValue phi_process(std::size_t n, std::size_t m, const DensityMatrix& rho0, const SpectralDecomposition& spec,
                     double sigma, double hbar, double t, double xi_t);

struct TypeDDecomposition {
  // A_t = sigma^2 (E_n - E_m)^2 / 8 * int_0^t Phi_s ds (trapezoid).
  std::vector<double> increasing;
  // Phi_t + A_t, a pathwise estimate of E_t[A_inf].
  std::vector<double> potential_plus_increasing;
};

TypeDDecomposition type_d_decomposition(double energy_gap, double sigma, double dt, std::span<const double> phi);

/// sum_n pi_n(t) L_n + sum_{n != m} P_n rho0 P_m exp(-i(E_n-E_m)t/hbar) Phi_nm,t,
/// assembled from Luders states and decoherence factors.
DensityMatrix state_decomposition(const DensityMatrix& rho0, const SpectralDecomposition& spec, double sigma,
                                  double hbar, double t, double xi_t, const ToleranceSet& tols = {});

/// Closed-form states along an information path, with W recovered from xi.
Trajectory closed_form_trajectory(const InformationPath& path, const DensityMatrix& rho0, const HermitianOperator& h,
                                  const SpectralDecomposition& spec, double sigma, double hbar,
                                  const ToleranceSet& tols = {});

/// Operational "t -> infinity": max(50 / (sigma * min_gap)^2, 10 / (sigma^2 V0)).
/// Returns `fallback` when neither term is defined.
double default_horizon(const SpectralDecomposition& spec, double v0, double sigma, double fallback = 10.0);

// Precomputed eigenbasis data for evaluating the closed form many times,
// as the ensemble runner does.
class FilterModel {
 public:
  FilterModel(const DensityMatrix& rho0, const SpectralDecomposition& spec, double sigma, double hbar);

  struct Snapshot {
    std::vector<double> log_weights;
    double log_norm = 0.0;
    std::vector<double> probabilities;
    double energy = 0.0;
    double variance = 0.0;
    double purity = 0.0;
  };

  void evaluate(double t, double xi_t, Snapshot& out) const;
  // Same state closed_form_state returns, without validation.
  ComplexMatrix state(double t, double xi_t, const Snapshot& snap) const;
  // log Phi_nm,t for a pair, using the snapshot's normalizer.
  double log_phi(std::size_t n, std::size_t m, double t, double xi_t, const Snapshot& snap) const;

  const std::vector<double>& prior() const noexcept { return prior_; }
  const std::vector<double>& energies() const noexcept { return energies_; }
  double sigma() const noexcept { return sigma_; }

 private:
  std::vector<double> prior_;
  std::vector<double> log_prior_;
  std::vector<double> energies_;
  std::vector<std::size_t> level_of_;
  ComplexMatrix rho0_eigen_;
  ComplexMatrix basis_;
  double sigma_;
  double hbar_;
};

double log_sum_exp(std::span<const double> values);

}  // namespace reduction
