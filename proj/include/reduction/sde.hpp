#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "reduction/rng.hpp"
#include "reduction/spectral.hpp"

namespace reduction {

struct TimeGrid {
  double t_max = 0.0;
  double dt = 0.0;
  std::size_t n_steps = 0;

  /// Throws ValidationError unless dt > 0, t_max >= 0 and t_max is an
  /// integer multiple of dt to within relative 1e-9.
  static TimeGrid make(double t_max, double dt);

  double time(std::size_t k) const noexcept { return static_cast<double>(k) * dt; }
};

/// Brownian increments dW_k ~ Normal(0, dt), one per grid step.
struct NoisePath {
  std::vector<double> increments;
  std::uint64_t seed = 0;

  static NoisePath sample(const TimeGrid& grid, std::uint64_t seed);
  static NoisePath sample(const TimeGrid& grid, RandomStream& rng);
};

struct Trajectory {
  TimeGrid grid;
  std::vector<DensityMatrix> states;
  std::vector<double> xi;
  std::vector<double> w;
  std::vector<StateMoments> moments;
  std::vector<double> purity;
  // level_probs[k][r] = tr(rho_k P_r)
  std::vector<std::vector<double>> level_probs;
  // |P_n rho_k P_m| for n < m; symmetric in (n, m).
  std::map<LevelPair, std::vector<double>> offdiag;
};

/// Raw Euler-Maruyama update of the energy-driven stochastic master equation,
/// without any repair. The update preserves the trace exactly but not
/// positivity: for a pure state it goes negative at O(dW^2 - dt).
ComplexMatrix sme_increment(const DensityMatrix& rho, const HermitianOperator& h, double sigma, double hbar, double dt,
                            double dw);

/// One Euler-Maruyama step of the energy-driven stochastic master equation
///   d rho = -(i/hbar)[H, rho] dt + (sigma^2/8)(2 H rho H - H^2 rho - rho H^2) dt
///           + (sigma/2)((H - H_t) rho + rho (H - H_t)) dW,    H_t = tr(rho H),
/// followed by repair_density.
DensityMatrix sme_step(const DensityMatrix& rho, const HermitianOperator& h, double sigma, double hbar,
                       double dt, double dw, const ToleranceSet& tols = {});

/// Iterates sme_step over the grid. W accumulates the supplied increments and
/// xi is rebuilt as xi_{k+1} = xi_k + dW_k + sigma H_k dt. A failing step is
/// rethrown as StepDivergence naming the step index.
Trajectory simulate_sme(const DensityMatrix& rho0, const HermitianOperator& h, double sigma, double hbar,
                        const TimeGrid& grid, const NoisePath& noise, const ToleranceSet& tols = {});
Trajectory simulate_sme(const DensityMatrix& rho0, const HermitianOperator& h, const SpectralDecomposition& spec,
                        double sigma, double hbar, const TimeGrid& grid, std::span<const double> increments,
                        const ToleranceSet& tols = {});

/// One Euler-Maruyama step of the pure-state reduction equation, renormalized
/// to unit length.
ComplexVector sse_step(const ComplexVector& psi, const HermitianOperator& h, double sigma, double hbar, double dt,
                       double dw);

/// -(i/hbar)[H, rho] + (sigma^2/8)(2 H rho H - H^2 rho - rho H^2)
ComplexMatrix lindblad_rhs(const ComplexMatrix& rho_bar, const HermitianOperator& h, double sigma, double hbar);

/// Classical RK4 for the mean-state master equation, trace renormalized after
/// every step. Element k of the result is the state at grid.time(k).
std::vector<DensityMatrix> integrate_lindblad(const DensityMatrix& rho0, const HermitianOperator& h, double sigma,
                                              double hbar, const TimeGrid& grid, const ToleranceSet& tols = {});

/// Upper bound V0 / (1 + V0 sigma^2 t) on the ensemble-mean energy variance.
double variance_bound(double v0, double sigma, double t);

/// Builds the derived Trajectory columns (moments, purity, level
/// probabilities, coherences) for an already computed state sequence.
void fill_observables(Trajectory& traj, const HermitianOperator& h, const SpectralDecomposition& spec);

}  // namespace reduction
