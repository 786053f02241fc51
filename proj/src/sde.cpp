#include "reduction/sde.hpp"

#include <cmath>
#include <sstream>

#include "reduction/errors.hpp"

namespace reduction {

namespace {

const Complex kI{0.0, 1.0};

void require_dims(const ComplexMatrix& rho, const HermitianOperator& h, const char* what) {
  if (rho.rows() != h.dim() || rho.cols() != h.dim()) {
    std::ostringstream os;
    os << what << ": state is " << rho.rows() << "x" << rho.cols() << ", operator is " << h.dim();
    throw LabError(ErrorKind::DimensionMismatch, os.str());
  }
}

}  // namespace

TimeGrid TimeGrid::make(double t_max, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw LabError(ErrorKind::ValidationError, "grid.dt must be positive and finite", dt);
  }
  if (!(t_max >= 0.0) || !std::isfinite(t_max)) {
    throw LabError(ErrorKind::ValidationError, "grid.t_max must be nonnegative and finite", t_max);
  }
  const double ratio = t_max / dt;
  const double steps = std::round(ratio);
  if (std::abs(steps * dt - t_max) > 1e-9 * std::max(t_max, dt)) {
    std::ostringstream os;
    os << "grid.t_max = " << t_max << " is not a multiple of dt = " << dt;
    throw LabError(ErrorKind::ValidationError, os.str());
  }
  return TimeGrid{steps * dt, dt, static_cast<std::size_t>(steps)};
}

NoisePath NoisePath::sample(const TimeGrid& grid, std::uint64_t seed) {
  RandomStream rng(seed);
  return sample(grid, rng);
}

NoisePath NoisePath::sample(const TimeGrid& grid, RandomStream& rng) {
  NoisePath path;
  path.seed = rng.seed();
  path.increments.resize(grid.n_steps);
  const double scale = std::sqrt(grid.dt);
  for (auto& dw : path.increments) dw = scale * rng.normal();
  return path;
}

ComplexMatrix lindblad_rhs(const ComplexMatrix& rho_bar, const HermitianOperator& h, double sigma, double hbar) {
  require_dims(rho_bar, h, "lindblad_rhs");
  const ComplexMatrix& H = h.matrix();
  const ComplexMatrix h_rho = H * rho_bar;
  const ComplexMatrix rho_h = rho_bar * H;
  const ComplexMatrix unitary = (-kI / hbar) * (h_rho - rho_h);
  const ComplexMatrix dephasing = 2.0 * h_rho * H - H * h_rho - rho_h * H;
  return unitary + (sigma * sigma / 8.0) * dephasing;
}

ComplexMatrix sme_increment(const DensityMatrix& rho, const HermitianOperator& h, double sigma, double hbar, double dt,
                            double dw) {
  require_dims(rho.matrix(), h, "sme_step");
  if (!(dt > 0.0)) throw LabError(ErrorKind::ValidationError, "dt must be positive", dt);
  if (!std::isfinite(dw)) throw LabError(ErrorKind::NonFiniteInput, "dW is not finite");

  const ComplexMatrix& r = rho.matrix();
  const Eigen::Index n = r.rows();
  const double energy = (r * h.matrix()).trace().real();
  const ComplexMatrix centered = h.matrix() - energy * ComplexMatrix::Identity(n, n);
  const ComplexMatrix c_rho = centered * r;
  const ComplexMatrix noise = c_rho + c_rho.adjoint();

  return r + lindblad_rhs(r, h, sigma, hbar) * dt + (0.5 * sigma * dw) * noise;
}

DensityMatrix sme_step(const DensityMatrix& rho, const HermitianOperator& h, double sigma, double hbar, double dt,
                       double dw, const ToleranceSet& tols) {
  return repair_density(sme_increment(rho, h, sigma, hbar, dt, dw), tols);
}

Trajectory simulate_sme(const DensityMatrix& rho0, const HermitianOperator& h, double sigma, double hbar,
                        const TimeGrid& grid, const NoisePath& noise, const ToleranceSet& tols) {
  return simulate_sme(rho0, h, spectral_decompose(h, std::nullopt, tols), sigma, hbar, grid, noise.increments,
                      tols);
}

Trajectory simulate_sme(const DensityMatrix& rho0, const HermitianOperator& h, const SpectralDecomposition& spec,
                        double sigma, double hbar, const TimeGrid& grid, std::span<const double> increments,
                        const ToleranceSet& tols) {
  require_dims(rho0.matrix(), h, "simulate_sme");
  if (increments.size() != grid.n_steps) {
    std::ostringstream os;
    os << "noise path has " << increments.size() << " increments, grid has " << grid.n_steps << " steps";
    throw LabError(ErrorKind::DimensionMismatch, os.str());
  }

  Trajectory traj;
  traj.grid = grid;
  traj.states.reserve(grid.n_steps + 1);
  traj.xi.assign(grid.n_steps + 1, 0.0);
  traj.w.assign(grid.n_steps + 1, 0.0);
  traj.states.push_back(rho0);

  for (std::size_t k = 0; k < grid.n_steps; ++k) {
    const DensityMatrix& current = traj.states.back();
    const double energy = (current.matrix() * h.matrix()).trace().real();
    try {
      traj.states.push_back(sme_step(current, h, sigma, hbar, grid.dt, increments[k], tols));
    } catch (const LabError& e) {
      std::ostringstream os;
      os << "step " << k << " (t = " << grid.time(k) << "): " << e.what();
      throw LabError(ErrorKind::StepDivergence, os.str(), e.measured());
    }
    traj.w[k + 1] = traj.w[k] + increments[k];
    traj.xi[k + 1] = traj.xi[k] + increments[k] + sigma * energy * grid.dt;
  }
  fill_observables(traj, h, spec);
  return traj;
}

void fill_observables(Trajectory& traj, const HermitianOperator& h, const SpectralDecomposition& spec) {
  const std::size_t count = traj.states.size();
  const auto pairs = level_pairs(spec.size());
  traj.moments.clear();
  traj.purity.clear();
  traj.level_probs.clear();
  traj.offdiag.clear();
  traj.moments.reserve(count);
  traj.purity.reserve(count);
  traj.level_probs.reserve(count);
  for (const auto& pair : pairs) traj.offdiag[pair].reserve(count);

  for (const auto& state : traj.states) {
    traj.moments.push_back(moments(state, h));
    traj.purity.push_back(state.purity());
    traj.level_probs.push_back(level_probabilities(state, spec));
    for (const auto& [n, m] : pairs) {
      const ComplexMatrix block = spec.levels[n].projector * state.matrix() * spec.levels[m].projector;
      traj.offdiag[{n, m}].push_back(block.norm());
    }
  }
}

ComplexVector sse_step(const ComplexVector& psi, const HermitianOperator& h, double sigma, double hbar, double dt,
                       double dw) {
  if (psi.size() != h.dim()) {
    throw LabError(ErrorKind::DimensionMismatch, "sse_step: state vector and operator dimensions differ");
  }
  const double norm2 = psi.squaredNorm();
  if (!(norm2 > 0.0) || !std::isfinite(norm2)) {
    throw LabError(ErrorKind::StepDivergence, "state vector is zero or non-finite");
  }
  const ComplexVector h_psi = h.matrix() * psi;
  const double energy = psi.dot(h_psi).real() / norm2;
  const ComplexVector c_psi = h_psi - energy * psi;
  const ComplexVector c2_psi = h.matrix() * c_psi - energy * c_psi;

  ComplexVector next = psi + ((-kI / hbar) * h_psi - (sigma * sigma / 8.0) * c2_psi) * dt + (0.5 * sigma * dw) * c_psi;
  const double next_norm = next.norm();
  if (!(next_norm > 0.0) || !std::isfinite(next_norm)) {
    throw LabError(ErrorKind::StepDivergence, "state vector vanished or diverged", next_norm);
  }
  return next / next_norm;
}

std::vector<DensityMatrix> integrate_lindblad(const DensityMatrix& rho0, const HermitianOperator& h, double sigma,
                                              double hbar, const TimeGrid& grid, const ToleranceSet& tols) {
  require_dims(rho0.matrix(), h, "integrate_lindblad");
  std::vector<DensityMatrix> path;
  path.reserve(grid.n_steps + 1);
  path.push_back(rho0);
  const double dt = grid.dt;
  for (std::size_t k = 0; k < grid.n_steps; ++k) {
    const ComplexMatrix& y = path.back().matrix();
    const ComplexMatrix k1 = lindblad_rhs(y, h, sigma, hbar);
    const ComplexMatrix k2 = lindblad_rhs(y + 0.5 * dt * k1, h, sigma, hbar);
    const ComplexMatrix k3 = lindblad_rhs(y + 0.5 * dt * k2, h, sigma, hbar);
    const ComplexMatrix k4 = lindblad_rhs(y + dt * k3, h, sigma, hbar);
    const ComplexMatrix next = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    try {
      path.push_back(repair_density(next, tols));
    } catch (const LabError& e) {
      std::ostringstream os;
      os << "mean-state step " << k << ": " << e.what();
      throw LabError(ErrorKind::StepDivergence, os.str(), e.measured());
    }
  }
  return path;
}

double variance_bound(double v0, double sigma, double t) {
  return v0 / (1.0 + v0 * sigma * sigma * t);
}

}  // namespace reduction
