#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "reduction/errors.hpp"
#include "reduction/sde.hpp"
#include "test_support.hpp"

using namespace reduction;
using namespace reduction::testing;

namespace {

// exp(-iHt/hbar) rho exp(iHt/hbar) via the eigenbasis.
ComplexMatrix exact_unitary(const HermitianOperator& h, const ComplexMatrix& rho, double t, double hbar) {
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> solver(h.matrix());
  const Eigen::Index n = h.dim();
  ComplexVector phases(n);
  for (Eigen::Index i = 0; i < n; ++i) phases(i) = std::polar(1.0, -solver.eigenvalues()(i) * t / hbar);
  const ComplexMatrix u = solver.eigenvectors() * phases.asDiagonal() * solver.eigenvectors().adjoint();
  return u * rho * u.adjoint();
}

}  // namespace

TEST_CASE("TimeGrid validation") {
  const auto grid = TimeGrid::make(2.0, 1e-3);
  CHECK(grid.n_steps == 2000);
  CHECK(grid.time(grid.n_steps) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK_THROWS_AS(TimeGrid::make(1.0, -1e-3), LabError);
  CHECK_THROWS_AS(TimeGrid::make(1.0, 0.3), LabError);
}

TEST_CASE("sme_step leaves an eigenprojector fixed") {
  const HermitianOperator h(diag({0.0, 1.0, 2.5}));
  const auto rho = validate_density(diag({0, 1, 0}));
  const auto next = sme_step(rho, h, 1.3, 1.0, 1e-3, 0.05);
  CHECK(max_abs(next.matrix() - rho.matrix()) == 0.0);

  std::mt19937_64 rng(1);
  const auto rotated = hermitian_with_spectrum(rng, {-1.0, 0.5, 2.0});
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> solver(rotated.matrix());
  const auto eig = DensityMatrix::pure(solver.eigenvectors().col(1));
  CHECK(max_abs(sme_step(eig, rotated, 1.0, 1.0, 1e-3, -0.04).matrix() - eig.matrix()) < 1e-14);
}

TEST_CASE("sme_step matches the scalar recursion for a diagonal two-level state") {
  const HermitianOperator h(diag({0.0, 1.0}));
  const auto rho = DensityMatrix::maximally_mixed(2);
  const double sigma = 1.0, dt = 1e-3, dw = 0.02;
  const auto next = sme_step(rho, h, sigma, 1.0, dt, dw);

  // Diagonal in the energy basis: commutator and dephasing vanish, leaving
  // p_i' = p_i + sigma (E_i - H) p_i dW with H = sum_i p_i E_i.
  const double e[] = {0.0, 1.0};
  const double p[] = {0.5, 0.5};
  const double energy = p[0] * e[0] + p[1] * e[1];
  const double p0 = p[0] + sigma * (e[0] - energy) * p[0] * dw;
  const double p1 = p[1] + sigma * (e[1] - energy) * p[1] * dw;
  CHECK(p0 == doctest::Approx(0.495));
  CHECK(next.matrix()(0, 0).real() == doctest::Approx(p0 / (p0 + p1)).epsilon(1e-14));
  CHECK(next.matrix()(1, 1).real() == doctest::Approx(p1 / (p0 + p1)).epsilon(1e-14));
  CHECK(std::abs(next.matrix()(0, 1)) == 0.0);
}

TEST_CASE("sme_step without reduction is a unitary Euler step") {
  std::mt19937_64 rng(2);
  const HermitianOperator h(random_hermitian(rng, 3));
  const auto rho = random_density(rng, 3);
  double previous = 0.0;
  for (double dt : {1e-3, 5e-4, 2.5e-4}) {
    const auto next = sme_step(rho, h, 0.0, 1.0, dt, 0.3);
    const double err = max_abs(next.matrix() - exact_unitary(h, rho.matrix(), dt, 1.0));
    const double purity_drift = std::abs(next.purity() - rho.purity());
    CHECK(purity_drift < 10.0 * dt * dt * h.matrix().squaredNorm());
    if (previous > 0.0) CHECK(err / previous == doctest::Approx(0.25).epsilon(0.1));
    previous = err;
  }
}

TEST_CASE("sme_step preserves the trace without relying on renormalization") {
  std::mt19937_64 rng(4);
  const HermitianOperator h(random_hermitian(rng, 4));
  const auto rho = random_density(rng, 4);
  const ComplexMatrix& r = rho.matrix();
  const double energy = (r * h.matrix()).trace().real();
  const ComplexMatrix c = h.matrix() - energy * ComplexMatrix::Identity(4, 4);
  const ComplexMatrix raw = r + lindblad_rhs(r, h, 1.0, 1.0) * 1e-2 + 0.5 * 0.1 * (c * r + r * c);
  CHECK(std::abs(raw.trace().real() - 1.0) < 1e-14);
  CHECK(std::abs(sme_step(rho, h, 1.0, 1.0, 1e-2, 0.1).matrix().trace().real() - 1.0) < 1e-15);
}

TEST_CASE("Euler-Maruyama loses positivity on pure states") {
  // X rho X (dt - dW^2) / 4 is the missing second-order term; with
  // dW^2 > dt it subtracts a rank-one piece from a pure state.
  const HermitianOperator h(diag({0.0, 1.0}));
  ComplexVector plus(2);
  plus << 1.0, 1.0;
  const auto rho = DensityMatrix::pure(plus);
  const double dt = 1e-3;
  const ComplexMatrix raw = sme_increment(rho, h, 1.0, 1.0, dt, 2.0 * std::sqrt(dt));
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> solver(raw);
  CHECK(solver.eigenvalues()(0) < -ToleranceSet{}.clamp);
  CHECK_THROWS_AS(sme_step(rho, h, 1.0, 1.0, dt, 2.0 * std::sqrt(dt)), LabError);
}

TEST_CASE("sme_step reports divergence when positivity is lost beyond the clamp") {
  const HermitianOperator h(diag({0.0, 1.0}));
  const auto rho = validate_density(diag({0.99, 0.01}));
  try {
    sme_step(rho, h, 1.0, 1.0, 1e-3, 150.0);
    FAIL("expected StepDivergence");
  } catch (const LabError& e) {
    CHECK(e.kind() == ErrorKind::StepDivergence);
  }
}

TEST_CASE("repair_density clamps small negative eigenvalues") {
  ComplexMatrix m = diag({1.0 + 5e-7, -5e-7});
  const auto repaired = repair_density(m);
  CHECK(repaired.matrix()(1, 1).real() >= 0.0);
  CHECK(std::abs(repaired.matrix().trace().real() - 1.0) < 1e-15);
  CHECK_THROWS_AS(repair_density(diag({1.1, -0.1})), LabError);
}

TEST_CASE("simulate_sme with zero noise and no reduction conserves the spectrum") {
  std::mt19937_64 rng(5);
  const HermitianOperator h(random_hermitian(rng, 3));
  const auto rho0 = random_density(rng, 3);
  const auto grid = TimeGrid::make(1.0, 1e-3);
  NoisePath quiet;
  quiet.increments.assign(grid.n_steps, 0.0);
  const auto traj = simulate_sme(rho0, h, 0.0, 1.0, grid, quiet);
  REQUIRE(traj.states.size() == grid.n_steps + 1);
  CHECK(traj.w.front() == 0.0);
  CHECK(traj.xi.front() == 0.0);
  for (std::size_t k = 0; k <= grid.n_steps; ++k) {
    CHECK(traj.moments[k].mean == doctest::Approx(traj.moments[0].mean).epsilon(1e-12));
    CHECK(traj.moments[k].variance == doctest::Approx(traj.moments[0].variance).epsilon(1e-12));
    CHECK(std::abs(traj.purity[k] - traj.purity[0]) < grid.dt * h.matrix().squaredNorm());
  }
}

TEST_CASE("simulate_sme keeps the energy inside the spectrum and is deterministic") {
  const HermitianOperator h(diag({0, 1, 2}));
  ComplexMatrix r = diag({0.25, 0.25, 0.5});
  r(0, 2) = r(2, 0) = 0.2;
  const auto rho0 = validate_density(r);
  const auto grid = TimeGrid::make(5.0, 1e-3);
  const auto noise = NoisePath::sample(grid, 99);
  const auto a = simulate_sme(rho0, h, 1.0, 1.0, grid, noise);
  const auto b = simulate_sme(rho0, h, 1.0, 1.0, grid, NoisePath::sample(grid, 99));
  for (std::size_t k = 0; k <= grid.n_steps; ++k) {
    CHECK(a.moments[k].mean >= -1e-12);
    CHECK(a.moments[k].mean <= 2.0 + 1e-12);
    CHECK(a.states[k].matrix() == b.states[k].matrix());
    CHECK(a.xi[k] == b.xi[k]);
  }
  CHECK(a.w.back() == doctest::Approx(std::accumulate(noise.increments.begin(), noise.increments.end(), 0.0)));
}

TEST_CASE("simulate_sme rejects a mismatched noise path") {
  const HermitianOperator h(diag({0, 1}));
  NoisePath noise;
  noise.increments.assign(3, 0.0);
  CHECK_THROWS_AS(simulate_sme(DensityMatrix::maximally_mixed(2), h, 1.0, 1.0, TimeGrid::make(1.0, 0.1), noise),
                  LabError);
}

TEST_CASE("eigenstates absorb the dynamics") {
  // Closeness is measured as the infidelity 1 - tr(rho P_r): coherences of a
  // collapsing state only shrink like sqrt(V).
  const HermitianOperator h(diag({0.0, 1.0}));
  ComplexMatrix r = diag({0.5, 0.5});
  r(0, 1) = r(1, 0) = 0.25;
  const auto grid = TimeGrid::make(120.0, 1e-3);
  const auto traj = simulate_sme(validate_density(r), h, 1.0, 1.0, grid, NoisePath::sample(grid, 17));
  const double eig_eps = 1e-12;
  std::size_t entry = traj.states.size();
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    if (traj.moments[k].variance < eig_eps) {
      entry = k;
      break;
    }
  }
  REQUIRE(entry < traj.states.size());
  const std::size_t level = traj.level_probs[entry][0] > 0.5 ? 0 : 1;
  double worst = 0.0;
  for (std::size_t k = entry; k < traj.states.size(); ++k) {
    worst = std::max(worst, 1.0 - traj.level_probs[k][level]);
  }
  CHECK(worst < ToleranceSet{}.matrix);
}

TEST_CASE("sse_step keeps eigenvectors up to phase") {
  const HermitianOperator h(diag({-1.0, 0.5, 2.0}));
  ComplexVector e(3);
  e << 0.0, 1.0, 0.0;
  const auto next = sse_step(e, h, 1.0, 1.0, 1e-2, 0.3);
  CHECK(std::abs(std::abs(next.dot(e)) - 1.0) < 1e-14);
}

TEST_CASE("sse_step without reduction follows the unitary propagator") {
  std::mt19937_64 rng(8);
  const HermitianOperator h(random_hermitian(rng, 3));
  ComplexVector psi = random_complex(rng, 3).col(0);
  psi.normalize();
  const double dt = 1e-3;
  const ComplexVector next = sse_step(psi, h, 0.0, 1.0, dt, 0.7);
  const ComplexMatrix exact = exact_unitary(h, psi * psi.adjoint(), dt, 1.0);
  CHECK(max_abs(next * next.adjoint() - exact) < 10.0 * dt * dt * h.matrix().squaredNorm());
}

TEST_CASE("pure-state step agrees with the master-equation step") {
  // Projecting the state-vector step and stepping the density matrix differ
  // by sigma^2/4 (X rho X - V rho)(dW^2 - dt) + O(dt^{3/2}), X = H - <H>.
  std::mt19937_64 rng(12);
  const HermitianOperator h(random_hermitian(rng, 3));
  ComplexVector psi = random_complex(rng, 3).col(0);
  psi.normalize();
  const auto rho = DensityMatrix::pure(psi);
  const double sigma = 1.0;
  const double energy = (rho.matrix() * h.matrix()).trace().real();
  const ComplexMatrix x = h.matrix() - energy * ComplexMatrix::Identity(3, 3);
  const double v = (rho.matrix() * x * x).trace().real();
  const ComplexMatrix lead = 0.25 * sigma * sigma * (x * rho.matrix() * x - v * rho.matrix());

  double prev_sign = 0.0, prev_generic = 0.0;
  for (double dt : {1e-3, 2.5e-4, 6.25e-5}) {
    // dW^2 = dt: leading discrepancy vanishes.
    const double dw = std::sqrt(dt);
    const ComplexVector s = sse_step(psi, h, sigma, 1.0, dt, dw);
    const double sign_err = max_abs(s * s.adjoint() - sme_increment(rho, h, sigma, 1.0, dt, dw));

    // Generic increment: after removing the leading term the rest is O(dt^{3/2}).
    const double dw2 = 1.7 * std::sqrt(dt);
    const ComplexVector g = sse_step(psi, h, sigma, 1.0, dt, dw2);
    const ComplexMatrix diff = g * g.adjoint() - sme_increment(rho, h, sigma, 1.0, dt, dw2);
    const double generic_err = max_abs(diff - lead * (dw2 * dw2 - dt));

    if (prev_sign > 0.0) {
      // A factor 4 in dt: dt^{3/2} scaling predicts a ratio of 1/8.
      CHECK(sign_err / prev_sign < 0.2);
      CHECK(generic_err / prev_generic < 0.2);
    }
    prev_sign = sign_err;
    prev_generic = generic_err;
  }
}

TEST_CASE("lindblad_rhs basic properties") {
  const HermitianOperator h(diag({0.0, 1.0, 3.0}));
  CHECK(max_abs(lindblad_rhs(diag({0.2, 0.3, 0.5}), h, 1.0, 1.0)) == 0.0);

  std::mt19937_64 rng(6);
  const HermitianOperator g(random_hermitian(rng, 5));
  for (int i = 0; i < 10; ++i) {
    const auto rho = random_density(rng, 5);
    CHECK(std::abs(lindblad_rhs(rho.matrix(), g, 0.7, 1.3).trace()) < 1e-13);
  }
  CHECK_THROWS_AS(lindblad_rhs(ComplexMatrix::Identity(2, 2), h, 1.0, 1.0), LabError);
}

TEST_CASE("lindblad coherence decays at sigma^2 dE^2 / 8 with phase rotation") {
  const double e1 = 0.0, e2 = 1.5, sigma = 1.2, hbar = 0.8;
  const HermitianOperator h(diag({e1, e2}));
  ComplexMatrix r = diag({0.5, 0.5});
  r(0, 1) = Complex(0.3, 0.1);
  r(1, 0) = std::conj(r(0, 1));
  const auto rho0 = validate_density(r);
  const auto grid = TimeGrid::make(3.0, 1e-3);
  const auto path = integrate_lindblad(rho0, h, sigma, hbar, grid);
  const double de = e1 - e2;
  const Complex rate(-sigma * sigma * de * de / 8.0, -de / hbar);
  for (std::size_t k = 0; k <= grid.n_steps; k += 500) {
    const Complex expected = r(0, 1) * std::exp(rate * grid.time(k));
    CHECK(std::abs(path[k].matrix()(0, 1) - expected) < 1e-12);
    CHECK(path[k].matrix()(0, 0).real() == doctest::Approx(0.5).epsilon(1e-14));
  }
}

TEST_CASE("integrate_lindblad without reduction matches the exact propagator at fourth order") {
  std::mt19937_64 rng(10);
  const HermitianOperator h(random_hermitian(rng, 3));
  const auto rho0 = random_density(rng, 3);
  double previous = 0.0;
  for (double dt : {0.02, 0.01}) {
    const auto grid = TimeGrid::make(2.0, dt);
    const auto path = integrate_lindblad(rho0, h, 0.0, 1.0, grid);
    const double err = max_abs(path.back().matrix() - exact_unitary(h, rho0.matrix(), 2.0, 1.0));
    CHECK(err < 1e-6);
    if (previous > 0.0) CHECK(err / previous == doctest::Approx(1.0 / 16.0).epsilon(0.25));
    previous = err;
  }
}

TEST_CASE("integrate_lindblad keeps diagonal states and kills coherences") {
  const HermitianOperator h(diag({0.0, 1.0, 2.0}));
  const auto diagonal = validate_density(diag({0.2, 0.3, 0.5}));
  const auto grid = TimeGrid::make(4.0, 1e-2);
  for (const auto& state : integrate_lindblad(diagonal, h, 1.0, 1.0, grid)) {
    CHECK(max_abs(state.matrix() - diagonal.matrix()) < 1e-14);
  }
  ComplexMatrix r = diag({0.2, 0.3, 0.5});
  r(0, 2) = r(2, 0) = 0.25;
  const auto late = integrate_lindblad(validate_density(r), h, 1.0, 1.0, TimeGrid::make(200.0, 1e-2)).back();
  CHECK(max_abs(late.matrix() - diagonal.matrix()) < 1e-10);
}

TEST_CASE("variance_bound arithmetic") {
  CHECK(variance_bound(0.0, 1.0, 5.0) == 0.0);
  CHECK(variance_bound(0.25, 1.0, 12.0) == doctest::Approx(0.0625));
  CHECK(variance_bound(0.3, 2.0, 0.0) == 0.3);
}
