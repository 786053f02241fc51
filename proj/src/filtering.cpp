#include "reduction/filtering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "reduction/errors.hpp"

namespace reduction {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Levels whose prior weight is below this are treated as unoccupied: the
// corresponding rows and columns of rho0 vanish for a PSD state.
constexpr double kEmptyLevel = 1e-15;

void require_time(double t, double xi_t) {
  if (!std::isfinite(t) || !std::isfinite(xi_t)) {
    throw LabError(ErrorKind::NonFiniteInput, "time and information value must be finite");
  }
  if (t < 0.0) throw LabError(ErrorKind::ValidationError, "time must be nonnegative", t);
}

std::vector<double> log_of(const std::vector<double>& p) {
  std::vector<double> out(p.size());
  std::transform(p.begin(), p.end(), out.begin(), [](double x) { return x > kEmptyLevel ? std::log(x) : kNegInf; });
  return out;
}

}  // namespace

double log_sum_exp(std::span<const double> values) {
  double peak = kNegInf;
  for (double v : values) peak = std::max(peak, v);
  if (peak == kNegInf) return kNegInf;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - peak);
  return peak + std::log(sum);
}

std::size_t sample_level(std::span<const double> probabilities, RandomStream& rng, const ToleranceSet& tols) {
  double total = 0.0;
  bool any = false;
  for (double p : probabilities) {
    total += std::max(0.0, p);
    any = any || p >= tols.luders_floor;
  }
  if (!any) throw LabError(ErrorKind::DegenerateDistribution, "every level probability is below the floor");
  const double u = rng.uniform() * total;
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t r = 0; r < probabilities.size(); ++r) {
    if (probabilities[r] <= 0.0) continue;
    acc += probabilities[r];
    last = r;
    if (u < acc) return r;
  }
  return last;
}

std::size_t sample_terminal_energy(const DensityMatrix& rho0, const SpectralDecomposition& spec, RandomStream& rng,
                                   const ToleranceSet& tols) {
  const auto p = level_probabilities(rho0, spec);
  double total = 0.0;
  for (double x : p) total += x;
  if (std::abs(total - 1.0) > std::max(tols.trace, 1e-9)) {
    throw LabError(ErrorKind::NotTraceOne, "level probabilities sum to " + std::to_string(total), total - 1.0);
  }
  return sample_level(p, rng, tols);
}

InformationPath information_path_from_increments(std::size_t level, const SpectralDecomposition& spec, double sigma,
                                                 const TimeGrid& grid, std::span<const double> b_increments,
                                                 double drift_scale) {
  if (level >= spec.size()) {
    throw LabError(ErrorKind::ValidationError, "level index " + std::to_string(level) + " out of range");
  }
  if (b_increments.size() != grid.n_steps) {
    throw LabError(ErrorKind::DimensionMismatch, "increment count does not match the grid");
  }
  InformationPath path;
  path.grid = grid;
  path.level = level;
  path.h_value = spec.levels[level].energy;
  path.b.assign(grid.n_steps + 1, 0.0);
  path.xi.assign(grid.n_steps + 1, 0.0);
  const double drift = drift_scale * sigma * path.h_value;
  for (std::size_t k = 0; k < grid.n_steps; ++k) {
    path.b[k + 1] = path.b[k] + b_increments[k];
    path.xi[k + 1] = drift * grid.time(k + 1) + path.b[k + 1];
  }
  return path;
}

InformationPath make_information_path(std::size_t level, const SpectralDecomposition& spec, double sigma,
                                      const TimeGrid& grid, RandomStream& rng, double drift_scale) {
  std::vector<double> increments(grid.n_steps);
  const double scale = std::sqrt(grid.dt);
  for (auto& db : increments) db = scale * rng.normal();
  InformationPath path = information_path_from_increments(level, spec, sigma, grid, increments, drift_scale);
  path.seed = rng.seed();
  return path;
}

FilterWeights filter_weights(std::span<const double> prior, std::span<const double> energies, double sigma, double t,
                             double xi_t) {
  require_time(t, xi_t);
  if (prior.size() != energies.size()) {
    throw LabError(ErrorKind::DimensionMismatch, "prior and energy lists differ in length");
  }
  FilterWeights out;
  out.log_weights.resize(prior.size());
  for (std::size_t r = 0; r < prior.size(); ++r) {
    const double e = energies[r];
    out.log_weights[r] =
        prior[r] > kEmptyLevel ? std::log(prior[r]) + sigma * e * xi_t - 0.5 * sigma * sigma * e * e * t : kNegInf;
  }
  const double norm = log_sum_exp(out.log_weights);
  if (!std::isfinite(norm)) throw LabError(ErrorKind::NonFiniteInput, "filter normalizer is not finite");
  out.probabilities.resize(prior.size());
  for (std::size_t r = 0; r < prior.size(); ++r) out.probabilities[r] = std::exp(out.log_weights[r] - norm);
  return out;
}

FilterWeights filter_weights(const DensityMatrix& rho0, const SpectralDecomposition& spec, double sigma, double t,
                             double xi_t) {
  const auto p = level_probabilities(rho0, spec);
  const auto e = spec.energies();
  return filter_weights(p, e, sigma, t, xi_t);
}

double energy_estimate(const DensityMatrix& rho0, const SpectralDecomposition& spec, double sigma, double t,
                       double xi_t) {
  const auto w = filter_weights(rho0, spec, sigma, t, xi_t);
  double h = 0.0;
  for (std::size_t r = 0; r < spec.size(); ++r) h += w.probabilities[r] * spec.levels[r].energy;
  return h;
}

std::vector<double> recovered_brownian(const InformationPath& path, const DensityMatrix& rho0,
                                       const SpectralDecomposition& spec, double sigma) {
  const auto p = level_probabilities(rho0, spec);
  const auto e = spec.energies();
  std::vector<double> w(path.xi.size(), 0.0);
  double integral = 0.0;
  for (std::size_t k = 0; k < path.xi.size(); ++k) {
    w[k] = path.xi[k] - sigma * integral;
    const auto weights = filter_weights(p, e, sigma, path.grid.time(k), path.xi[k]);
    double h = 0.0;
    for (std::size_t r = 0; r < e.size(); ++r) h += weights.probabilities[r] * e[r];
    integral += h * path.grid.dt;
  }
  return w;
}

PhiValue phi_process(std::size_t n, std::size_t m, const DensityMatrix& rho0, const SpectralDecomposition& spec,
                     double sigma, double hbar, double t, double xi_t) {
  if (n == m) throw LabError(ErrorKind::SameLevel, "decoherence factor needs two distinct levels");
  if (n >= spec.size() || m >= spec.size()) throw LabError(ErrorKind::ValidationError, "level index out of range");
  const auto w = filter_weights(rho0, spec, sigma, t, xi_t);
  const double norm = log_sum_exp(w.log_weights);
  const double en = spec.levels[n].energy;
  const double em = spec.levels[m].energy;
  PhiValue out;
  out.log_phi = 0.5 * sigma * (en + em) * xi_t - 0.25 * sigma * sigma * (en * en + em * em) * t - norm;
  out.phi = std::exp(out.log_phi);
  const double gap = en - em;
  out.martingale = std::exp(out.log_phi + sigma * sigma * gap * gap * t / 8.0);
  out.phase = std::polar(1.0, -gap * t / hbar);
  return out;
}

TypeDDecomposition type_d_decomposition(double energy_gap, double sigma, double dt, std::span<const double> phi) {
  TypeDDecomposition out;
  out.increasing.assign(phi.size(), 0.0);
  out.potential_plus_increasing.assign(phi.size(), 0.0);
  const double rate = sigma * sigma * energy_gap * energy_gap / 8.0;
  for (std::size_t k = 0; k < phi.size(); ++k) {
    if (k > 0) out.increasing[k] = out.increasing[k - 1] + rate * 0.5 * (phi[k - 1] + phi[k]) * dt;
    out.potential_plus_increasing[k] = phi[k] + out.increasing[k];
  }
  return out;
}

DensityMatrix state_decomposition(const DensityMatrix& rho0, const SpectralDecomposition& spec, double sigma,
                                  double hbar, double t, double xi_t, const ToleranceSet& tols) {
  const auto p = level_probabilities(rho0, spec);
  const auto w = filter_weights(rho0, spec, sigma, t, xi_t);
  const Eigen::Index dim = rho0.dim();
  ComplexMatrix out = ComplexMatrix::Zero(dim, dim);

  for (std::size_t n = 0; n < spec.size(); ++n) {
    if (p[n] <= kEmptyLevel) continue;
    if (p[n] > tols.luders_floor) {
      out += w.probabilities[n] * luders_state(rho0, spec, n, tols).matrix();
    } else {
      const ComplexMatrix& proj = spec.levels[n].projector;
      out += (w.probabilities[n] / p[n]) * (proj * rho0.matrix() * proj);
    }
  }
  for (std::size_t n = 0; n < spec.size(); ++n) {
    for (std::size_t m = 0; m < spec.size(); ++m) {
      if (n == m || p[n] <= kEmptyLevel || p[m] <= kEmptyLevel) continue;
      const PhiValue phi = phi_process(n, m, rho0, spec, sigma, hbar, t, xi_t);
      out += (phi.phase * phi.phi) * (spec.levels[n].projector * rho0.matrix() * spec.levels[m].projector);
    }
  }
  return validate_density(out, tols);
}

FilterModel::FilterModel(const DensityMatrix& rho0, const SpectralDecomposition& spec, double sigma, double hbar)
    : prior_(level_probabilities(rho0, spec)),
      log_prior_(log_of(prior_)),
      energies_(spec.energies()),
      level_of_(spec.level_of),
      rho0_eigen_(spec.eigenvectors.adjoint() * rho0.matrix() * spec.eigenvectors),
      basis_(spec.eigenvectors),
      sigma_(sigma),
      hbar_(hbar) {}

void FilterModel::evaluate(double t, double xi_t, Snapshot& out) const {
  const std::size_t levels = energies_.size();
  out.log_weights.resize(levels);
  out.probabilities.resize(levels);
  for (std::size_t r = 0; r < levels; ++r) {
    const double e = energies_[r];
    out.log_weights[r] = log_prior_[r] + sigma_ * e * xi_t - 0.5 * sigma_ * sigma_ * e * e * t;
  }
  out.log_norm = log_sum_exp(out.log_weights);
  double h = 0.0;
  double h2 = 0.0;
  for (std::size_t r = 0; r < levels; ++r) {
    const double pi = std::exp(out.log_weights[r] - out.log_norm);
    out.probabilities[r] = pi;
    h += pi * energies_[r];
  }
  for (std::size_t r = 0; r < levels; ++r) {
    const double d = energies_[r] - h;
    h2 += out.probabilities[r] * d * d;
  }
  out.energy = h;
  out.variance = h2;

  // |rho_t,ij| = |rho0_ij| exp(a_i + a_j - log_norm), a_r = sigma E_r xi / 2 - sigma^2 E_r^2 t / 4
  const Eigen::Index n = rho0_eigen_.rows();
  double purity = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t li = level_of_[static_cast<std::size_t>(i)];
    if (log_prior_[li] == kNegInf) continue;
    for (Eigen::Index j = 0; j < n; ++j) {
      const std::size_t lj = level_of_[static_cast<std::size_t>(j)];
      if (log_prior_[lj] == kNegInf) continue;
      const double scale = std::exp(0.5 * (out.log_weights[li] - log_prior_[li] + out.log_weights[lj] -
                                           log_prior_[lj]) -
                                    out.log_norm);
      purity += std::norm(rho0_eigen_(i, j)) * scale * scale;
    }
  }
  out.purity = purity;
}

ComplexMatrix FilterModel::state(double t, double xi_t, const Snapshot& snap) const {
  (void)xi_t;
  const Eigen::Index n = rho0_eigen_.rows();
  ComplexVector k(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t l = level_of_[static_cast<std::size_t>(i)];
    if (log_prior_[l] == kNegInf) {
      k(i) = 0.0;
      continue;
    }
    const double log_mod = 0.5 * (snap.log_weights[l] - log_prior_[l] - snap.log_norm);
    k(i) = std::polar(std::exp(log_mod), -energies_[l] * t / hbar_);
  }
  ComplexMatrix evolved = k.asDiagonal() * rho0_eigen_ * k.conjugate().asDiagonal();
  return basis_ * evolved * basis_.adjoint();
}

double FilterModel::log_phi(std::size_t n, std::size_t m, double t, double xi_t, const Snapshot& snap) const {
  const double en = energies_[n];
  const double em = energies_[m];
  return 0.5 * sigma_ * (en + em) * xi_t - 0.25 * sigma_ * sigma_ * (en * en + em * em) * t - snap.log_norm;
}

DensityMatrix closed_form_state(const DensityMatrix& rho0, const SpectralDecomposition& spec, double sigma,
                                double hbar, double t, double xi_t, const ToleranceSet& tols) {
  require_time(t, xi_t);
  const FilterModel model(rho0, spec, sigma, hbar);
  FilterModel::Snapshot snap;
  model.evaluate(t, xi_t, snap);
  if (!std::isfinite(snap.log_norm)) throw LabError(ErrorKind::NonFiniteInput, "closed-form normalizer diverged");
  if (t == 0.0) return rho0;
  return validate_density(model.state(t, xi_t, snap), tols);
}

Trajectory closed_form_trajectory(const InformationPath& path, const DensityMatrix& rho0, const HermitianOperator& h,
                                  const SpectralDecomposition& spec, double sigma, double hbar,
                                  const ToleranceSet& tols) {
  const FilterModel model(rho0, spec, sigma, hbar);
  Trajectory traj;
  traj.grid = path.grid;
  traj.xi = path.xi;
  traj.w = recovered_brownian(path, rho0, spec, sigma);
  traj.states.reserve(path.xi.size());
  FilterModel::Snapshot snap;
  for (std::size_t k = 0; k < path.xi.size(); ++k) {
    const double t = path.grid.time(k);
    if (k == 0) {
      traj.states.push_back(rho0);
      continue;
    }
    model.evaluate(t, path.xi[k], snap);
    traj.states.push_back(validate_density(model.state(t, path.xi[k], snap), tols));
  }
  fill_observables(traj, h, spec);
  return traj;
}

double default_horizon(const SpectralDecomposition& spec, double v0, double sigma, double fallback) {
  double horizon = 0.0;
  if (sigma > 0.0 && spec.size() > 1) {
    const double g = sigma * spec.min_gap();
    horizon = std::max(horizon, 50.0 / (g * g));
  }
  if (sigma > 0.0 && v0 > 0.0) horizon = std::max(horizon, 10.0 / (sigma * sigma * v0));
  return horizon > 0.0 ? horizon : fallback;
}

}  // namespace reduction
