#include <doctest.h>

#include <cmath>
#include <random>

#include "reduction/errors.hpp"
#include "reduction/spectral.hpp"
#include "test_support.hpp"

using namespace reduction;
using namespace reduction::testing;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const LabError& e) {
    return e.kind();
  }
  FAIL("expected LabError");
  return ErrorKind::ValidationError;
}

}  // namespace

TEST_CASE("validate_density accepts the maximally mixed state") {
  const auto rho = validate_density(ComplexMatrix::Identity(2, 2) / 2.0);
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> solver(rho.matrix());
  CHECK(solver.eigenvalues()(0) == doctest::Approx(0.5));
  CHECK(solver.eigenvalues()(1) == doctest::Approx(0.5));
}

TEST_CASE("validate_density renormalizes a trace within tolerance") {
  const auto rho = validate_density(diag({0.6, 0.4 + 1e-12}));
  CHECK(std::abs(rho.matrix().trace().real() - 1.0) < 4e-16);
  CHECK(rho.matrix()(0, 0).real() == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("validate_density reports each violated invariant") {
  CHECK(kind_of([] { validate_density(diag({1.2, -0.2})); }) == ErrorKind::NotPositive);
  CHECK(kind_of([] { validate_density(diag({0.7, 0.4})); }) == ErrorKind::NotTraceOne);
  ComplexMatrix skew = diag({0.5, 0.5});
  skew(0, 1) = 0.1;
  CHECK(kind_of([&] { validate_density(skew); }) == ErrorKind::NotHermitian);
  CHECK(kind_of([] { validate_density(ComplexMatrix::Zero(2, 3)); }) == ErrorKind::DimensionMismatch);

  try {
    validate_density(diag({1.2, -0.2}));
  } catch (const LabError& e) {
    CHECK(e.measured() == doctest::Approx(-0.2));
  }
}

TEST_CASE("validate_density hermitizes small asymmetry") {
  ComplexMatrix m = diag({0.5, 0.5});
  m(0, 1) = Complex(0.1, 1e-12);
  m(1, 0) = Complex(0.1, 0.0);
  const auto rho = validate_density(m);
  CHECK(hermiticity_defect(rho.matrix()) == 0.0);
}

TEST_CASE("HermitianOperator rejects non-Hermitian input with the deviation") {
  ComplexMatrix m = diag({0.0, 1.0});
  m(0, 1) = 0.5;
  try {
    HermitianOperator h(m);
    FAIL("accepted non-Hermitian matrix");
  } catch (const LabError& e) {
    CHECK(e.kind() == ErrorKind::NotHermitian);
    CHECK(e.measured() == doctest::Approx(0.5));
  }
}

TEST_CASE("spectral_decompose groups exact degeneracy") {
  const auto spec = spectral_decompose(HermitianOperator(diag({1, 1, 3})), 1e-9);
  REQUIRE(spec.size() == 2);
  CHECK(spec.levels[0].energy == doctest::Approx(1.0));
  CHECK(spec.levels[0].multiplicity == 2);
  CHECK(spec.levels[1].energy == doctest::Approx(3.0));
  CHECK(spec.levels[1].multiplicity == 1);
}

TEST_CASE("spectral_decompose merges near-degenerate eigenvalues to their mean") {
  const auto spec = spectral_decompose(HermitianOperator(diag({0, 1e-12, 1})), 1e-9);
  REQUIRE(spec.size() == 2);
  CHECK(spec.levels[0].multiplicity == 2);
  CHECK(spec.levels[0].energy == doctest::Approx(0.5e-12).epsilon(1e-9));
}

TEST_CASE("spectral_decompose of a Pauli-x matrix matches the analytic projectors") {
  ComplexMatrix x = ComplexMatrix::Zero(2, 2);
  x(0, 1) = x(1, 0) = 1.0;
  const auto spec = spectral_decompose(HermitianOperator(x));
  REQUIRE(spec.size() == 2);
  // Analytic: eigenvalue -1 with |-> = (1,-1)/sqrt2, +1 with |+> = (1,1)/sqrt2.
  ComplexMatrix minus(2, 2), plus(2, 2);
  minus << 0.5, -0.5, -0.5, 0.5;
  plus << 0.5, 0.5, 0.5, 0.5;
  CHECK(spec.levels[0].energy == doctest::Approx(-1.0));
  CHECK(spec.levels[1].energy == doctest::Approx(1.0));
  CHECK(max_abs(spec.levels[0].projector - minus) < 1e-12);
  CHECK(max_abs(spec.levels[1].projector - plus) < 1e-12);
}

TEST_CASE("spectral decompositions satisfy projector identities on random operators") {
  std::mt19937_64 rng(7);
  const ToleranceSet tols;
  for (int trial = 0; trial < 60; ++trial) {
    const Eigen::Index n = 1 + trial % 6;
    HermitianOperator h = (trial % 3 == 0)
                              ? hermitian_with_spectrum(rng, [&] {
                                  std::vector<double> v;
                                  for (Eigen::Index i = 0; i < n; ++i) v.push_back(static_cast<double>(i / 2));
                                  return v;
                                }())
                              : HermitianOperator(random_hermitian(rng, n));
    const auto spec = spectral_decompose(h);
    const ComplexMatrix id = ComplexMatrix::Identity(n, n);
    ComplexMatrix total = ComplexMatrix::Zero(n, n);
    ComplexMatrix rebuilt = ComplexMatrix::Zero(n, n);
    double emax = 0.0;
    int mult = 0;
    for (std::size_t r = 0; r < spec.size(); ++r) {
      const auto& p = spec.levels[r].projector;
      if (r > 0) CHECK(spec.levels[r].energy > spec.levels[r - 1].energy);
      CHECK(max_abs(p * p - p) < tols.matrix);
      CHECK(max_abs(p - p.adjoint()) < tols.matrix);
      CHECK(std::abs(p.trace().real() - spec.levels[r].multiplicity) < tols.matrix);
      for (std::size_t s = 0; s < spec.size(); ++s) {
        if (s != r) CHECK(max_abs(p * spec.levels[s].projector) < tols.matrix);
      }
      total += p;
      rebuilt += spec.levels[r].energy * p;
      emax = std::max(emax, std::abs(spec.levels[r].energy));
      mult += spec.levels[r].multiplicity;
    }
    CHECK(mult == n);
    CHECK(max_abs(total - id) < tols.matrix);
    CHECK(max_abs(rebuilt - h.matrix()) < tols.reconstruction * std::max(1.0, emax));
  }
}

TEST_CASE("luders_state fixed point and rank-one cases") {
  const HermitianOperator h(diag({0, 0, 1}));
  const auto spec = spectral_decompose(h);
  REQUIRE(spec.size() == 2);

  const auto rho0 = validate_density(spec.levels[0].projector / 2.0);
  CHECK(max_abs(luders_state(rho0, spec, 0).matrix() - rho0.matrix()) < 1e-14);

  std::mt19937_64 rng(3);
  const auto mixed = random_density(rng, 3);
  CHECK(max_abs(luders_state(mixed, spec, 1).matrix() - spec.levels[1].projector) < 1e-12);
}

TEST_CASE("luders_state with a single level returns the initial state") {
  const auto spec = spectral_decompose(HermitianOperator(ComplexMatrix::Zero(2, 2)));
  REQUIRE(spec.size() == 1);
  const auto rho0 = DensityMatrix::maximally_mixed(2);
  CHECK(max_abs(luders_state(rho0, spec, 0).matrix() - rho0.matrix()) < 1e-15);
}

TEST_CASE("luders_state refuses an unoccupied subspace") {
  const auto spec = spectral_decompose(HermitianOperator(diag({0, 1})));
  const auto rho0 = validate_density(diag({1, 0}));
  CHECK(kind_of([&] { luders_state(rho0, spec, 1); }) == ErrorKind::ZeroProbabilitySubspace);
}

TEST_CASE("luders states are energy eigenstates") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto h = hermitian_with_spectrum(rng, {-1.0, -1.0, 0.5, 2.0, 2.0});
    const auto spec = spectral_decompose(h);
    const auto rho0 = random_density(rng, 5);
    for (std::size_t r = 0; r < spec.size(); ++r) {
      const auto l = luders_state(rho0, spec, r);
      CHECK(max_abs(h.matrix() * l.matrix() - spec.levels[r].energy * l.matrix()) < 1e-9);
    }
  }
}

TEST_CASE("moments of reference states") {
  const HermitianOperator h2(diag({0, 1}));
  const auto eig = moments(validate_density(diag({0, 1})), h2);
  CHECK(eig.mean == doctest::Approx(1.0));
  CHECK(std::abs(eig.variance) < 1e-15);
  CHECK(std::abs(eig.skewness) < 1e-15);

  const auto half = moments(DensityMatrix::maximally_mixed(2), h2);
  CHECK(half.mean == doctest::Approx(0.5));
  CHECK(half.variance == doctest::Approx(0.25));
  CHECK(std::abs(half.skewness) < 1e-15);

  // Brute force over the three outcomes.
  const double p[] = {0.25, 0.25, 0.5};
  const double e[] = {0.0, 1.0, 2.0};
  double mean = 0.0;
  for (int i = 0; i < 3; ++i) mean += p[i] * e[i];
  double var = 0.0, skew = 0.0;
  for (int i = 0; i < 3; ++i) {
    var += p[i] * (e[i] - mean) * (e[i] - mean);
    skew += p[i] * std::pow(e[i] - mean, 3);
  }
  const auto m3 = moments(validate_density(diag({0.25, 0.25, 0.5})), HermitianOperator(diag({0, 1, 2})));
  CHECK(mean == doctest::Approx(1.25));
  CHECK(var == doctest::Approx(0.6875));
  CHECK(m3.mean == doctest::Approx(mean));
  CHECK(m3.variance == doctest::Approx(var));
  CHECK(m3.skewness == doctest::Approx(skew));
}

TEST_CASE("moments dimension mismatch") {
  CHECK(kind_of([] { moments(DensityMatrix::maximally_mixed(2), HermitianOperator(diag({0, 1, 2}))); }) ==
        ErrorKind::DimensionMismatch);
}

TEST_CASE("variance equals the level-probability variance on random states") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index n = 2 + trial % 5;
    const HermitianOperator h(random_hermitian(rng, n));
    const auto spec = spectral_decompose(h);
    const auto rho = random_density(rng, n, 1 + trial % n);
    const auto p = level_probabilities(rho, spec);
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t r = 0; r < spec.size(); ++r) {
      m1 += p[r] * spec.levels[r].energy;
      m2 += p[r] * spec.levels[r].energy * spec.levels[r].energy;
    }
    const auto mom = moments(rho, h);
    CHECK(mom.mean == doctest::Approx(m1).epsilon(1e-10));
    CHECK(std::abs(mom.variance - (m2 - m1 * m1)) < 1e-10);
    const double range = spec.spread();
    CHECK(mom.variance <= range * range / 4.0 + 1e-10);
  }
}

TEST_CASE("offdiag_norms") {
  const auto spec = spectral_decompose(HermitianOperator(diag({0, 1})));
  const auto diagonal = offdiag_norms(validate_density(diag({0.3, 0.7})), spec);
  for (const auto& [pair, value] : diagonal) CHECK(value == 0.0);

  // |+><+| = [[1/2, 1/2], [1/2, 1/2]]; P_1 rho P_2 keeps only the (0,1) entry.
  ComplexVector plus(2);
  plus << 1.0, 1.0;
  const auto norms = offdiag_norms(DensityMatrix::pure(plus), spec);
  CHECK(norms.at({0, 1}) == doctest::Approx(0.5));
  CHECK(norms.at({1, 0}) == doctest::Approx(0.5));

  std::mt19937_64 rng(9);
  const auto h = HermitianOperator(random_hermitian(rng, 4));
  const auto spec4 = spectral_decompose(h);
  const auto all = offdiag_norms(random_density(rng, 4), spec4);
  for (const auto& [pair, value] : all) CHECK(value == doctest::Approx(all.at({pair.second, pair.first})));
}
