#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <string>

#include "reduction/ensemble.hpp"
#include "reduction/errors.hpp"
#include "test_support.hpp"

using namespace reduction;
using namespace reduction::testing;

namespace {

DensityMatrix instance_a() {
  ComplexMatrix r = diag({0.5, 0.5});
  r(0, 1) = r(1, 0) = 0.25;
  return validate_density(r);
}

DensityMatrix instance_b() {
  ComplexMatrix r = diag({0.25, 0.25, 0.5});
  r(0, 1) = Complex(0.1, 0.05);
  r(0, 2) = Complex(0.1, 0.0);
  r(1, 2) = Complex(0.05, -0.1);
  r(1, 0) = std::conj(r(0, 1));
  r(2, 0) = std::conj(r(0, 2));
  r(2, 1) = std::conj(r(1, 2));
  return validate_density(r);
}

DensityMatrix instance_c() {
  ComplexMatrix r = diag({0.3, 0.3, 0.4});
  r(0, 1) = r(1, 0) = 0.1;
  return validate_density(r);
}

const Verdict& verdict(const EnsembleSummary& s, const std::string& name) {
  for (const auto& v : s.verdicts) {
    if (v.check == name) return v;
  }
  FAIL("missing verdict " << name);
  throw 0;
}

std::string describe(const Verdict& v) {
  std::string out = v.check + (v.passed ? " pass" : " FAIL") + " " + v.note;
  for (const auto& item : v.items) {
    out += "\n  " + item.label + ": " + std::to_string(item.measured) + " <= " + std::to_string(item.threshold) +
           (item.passed ? "" : "  <--");
  }
  return out;
}

}  // namespace

TEST_CASE("RunningStat merges like sequential accumulation") {
  RandomStream rng(1);
  RunningStat all, left, right;
  for (int i = 0; i < 1000; ++i) {
    const double x = 3.0 + rng.normal();
    all.add(x);
    (i < 377 ? left : right).add(x);
  }
  left.merge(right);
  CHECK(left.count == all.count);
  CHECK(left.mean == doctest::Approx(all.mean).epsilon(1e-14));
  CHECK(left.variance() == doctest::Approx(all.variance()).epsilon(1e-12));

  RunningStat one;
  one.add(2.0);
  CHECK(std::isnan(one.variance()));
  CHECK(std::isnan(one.standard_error()));
  RunningStat empty;
  empty.merge(one);
  CHECK(empty.mean == 2.0);
}

TEST_CASE("mode names") {
  for (Mode m : {Mode::Sde, Mode::ClosedForm, Mode::Both}) CHECK(parse_mode(to_string(m)) == m);
  CHECK_THROWS_AS(parse_mode("euler"), LabError);
}

TEST_CASE("thread count honours the environment cap") {
  ::unsetenv("REDUCTION_LAB_THREADS");
  CHECK(resolve_threads(8) == 8);
  CHECK(resolve_threads(0) >= 1);
  ::setenv("REDUCTION_LAB_THREADS", "3", 1);
  CHECK(resolve_threads(8) == 3);
  CHECK(resolve_threads(2) == 2);
  ::setenv("REDUCTION_LAB_THREADS", "junk", 1);
  CHECK(resolve_threads(8) == 8);
  ::unsetenv("REDUCTION_LAB_THREADS");
}

TEST_CASE("configuration errors") {
  EnsembleConfig cfg(HermitianOperator(diag({0, 1})), instance_a(), TimeGrid::make(1.0, 0.01));
  cfg.checks = {"born", "bogus"};
  CHECK_THROWS_AS(run_ensemble(cfg), LabError);
  cfg.checks = {"born"};
  cfg.n_paths = 0;
  CHECK_THROWS_AS(run_ensemble(cfg), LabError);
  cfg.n_paths = 10;
  cfg.level_weights = {1.0};
  CHECK_THROWS_AS(run_ensemble(cfg), LabError);
  cfg.level_weights.clear();
  cfg.lindblad_times = {0.505};
  CHECK_THROWS_AS(run_ensemble(cfg), LabError);

  EnsembleConfig mismatch(HermitianOperator(diag({0, 1, 2})), instance_a(), TimeGrid::make(1.0, 0.01));
  CHECK_THROWS_AS(run_ensemble(mismatch), LabError);
}

TEST_CASE("a single path reproduces its trajectory and flags the standard error") {
  const HermitianOperator h(diag({0, 1}));
  EnsembleConfig cfg(h, instance_a(), TimeGrid::make(2.0, 0.01));
  cfg.n_paths = 1;
  cfg.base_seed = 77;
  cfg.record_every = 10;
  const auto s = run_ensemble(cfg);
  CHECK_FALSE(s.stderr_defined);
  CHECK(s.times.size() == 21);

  const auto spec = spectral_decompose(h);
  RandomStream rng = RandomStream::for_path(77, 0);
  const auto prior = level_probabilities(instance_a(), spec);
  const std::size_t level = sample_level(prior, rng);
  double xi = 0.0;
  const Series& hs = s.primary().find("H");
  for (std::size_t j = 0; j < s.times.size(); ++j) {
    if (j > 0) {
      const double dt = s.times[j] - s.times[j - 1];
      xi += cfg.sigma * spec.levels[level].energy * dt + std::sqrt(dt) * rng.normal();
    }
    CHECK(hs.mean[j] == doctest::Approx(energy_estimate(instance_a(), spec, 1.0, s.times[j], xi)).epsilon(1e-13));
    CHECK(std::isnan(hs.stderr_[j]));
  }
  for (const auto& v : s.verdicts) {
    if (v.check != "luders") CHECK_FALSE(v.passed);
  }
}

TEST_CASE("an eigenprojector initial state passes every check trivially") {
  EnsembleConfig cfg(HermitianOperator(diag({0, 1, 2})), validate_density(diag({0, 1, 0})),
                     TimeGrid::make(20.0, 0.01));
  cfg.n_paths = 200;
  cfg.lindblad_times = {0.5, 1.0};
  const auto s = run_ensemble(cfg);
  for (double v : s.primary().find("V").mean) CHECK(v == 0.0);
  for (const auto& v : s.verdicts) CHECK_MESSAGE(v.passed, describe(v));
  CHECK(s.verdicts.size() == known_checks().size());
}

TEST_CASE("symmetric two-level Born frequencies") {
  EnsembleConfig cfg(HermitianOperator(diag({0, 1})), DensityMatrix::maximally_mixed(2), TimeGrid::make(120.0, 0.1));
  cfg.n_paths = 10000;
  cfg.base_seed = 3;
  cfg.checks = {"born"};
  const auto s = run_ensemble(cfg);
  for (double f : s.primary().born_frequencies) CHECK(std::abs(f - 0.5) <= 0.015);
  CHECK(s.primary().born_frequencies[0] + s.primary().born_frequencies[1] == doctest::Approx(1.0));
  CHECK_MESSAGE(verdict(s, "born").passed, describe(verdict(s, "born")));
}

TEST_CASE("zero coupling keeps every martingale exactly constant") {
  EnsembleConfig cfg(HermitianOperator(diag({0, 1, 2})), instance_b(), TimeGrid::make(5.0, 0.01));
  cfg.sigma = 0.0;
  cfg.n_paths = 200;
  cfg.checks = {"martingales"};
  const auto s = run_ensemble(cfg);
  for (double h : s.primary().find("H").mean) CHECK(h == s.initial_energy);
  CHECK_MESSAGE(verdict(s, "martingales").passed, describe(verdict(s, "martingales")));
}

TEST_CASE("three-level ensemble passes its checks and fails under corruption") {
  EnsembleConfig cfg(HermitianOperator(diag({0, 1, 2})), instance_b(), TimeGrid::make(50.0, 0.01));
  cfg.n_paths = 4000;
  cfg.base_seed = 11;
  cfg.checks = {"born", "martingales", "decoherence", "terminal_moments", "lindblad"};
  const auto s = run_ensemble(cfg);
  for (const auto& v : s.verdicts) CHECK_MESSAGE(v.passed, describe(v));

  const auto fits = fit_decoherence(s);
  REQUIRE(fits.size() == 3);
  CHECK(fits[0].expected == doctest::Approx(-0.125));
  CHECK(fits[1].expected == doctest::Approx(-0.5));
  CHECK(fits[1].slope / fits[0].slope == doctest::Approx(4.0).epsilon(0.1));

  SUBCASE("doubled drift breaks the energy martingale") {
    EnsembleConfig bad = cfg;
    bad.drift_scale = 2.0;
    bad.checks = {"martingales"};
    const auto b = run_ensemble(bad);
    CHECK_FALSE(verdict(b, "martingales").passed);
    CHECK(b.primary().terminal_mean == doctest::Approx(1.5).epsilon(0.02));
  }
  SUBCASE("a tilted level sampler breaks the Born rule") {
    EnsembleConfig bad = cfg;
    bad.level_weights = {1.0, 1.0, 1.5};
    bad.checks = {"born"};
    CHECK_FALSE(verdict(run_ensemble(bad), "born").passed);
  }
}

TEST_CASE("results do not depend on the thread count") {
  EnsembleConfig cfg(HermitianOperator(diag({0, 1, 2})), instance_b(), TimeGrid::make(5.0, 0.01));
  cfg.n_paths = 700;
  cfg.base_seed = 5;
  cfg.threads = 1;
  const auto one = run_ensemble(cfg);
  cfg.threads = 4;
  const auto four = run_ensemble(cfg);
  cfg.threads = 3;
  const auto three = run_ensemble(cfg);
  for (const auto* other : {&four, &three}) {
    REQUIRE(one.primary().series.size() == other->primary().series.size());
    for (std::size_t k = 0; k < one.primary().series.size(); ++k) {
      CHECK(one.primary().series[k].mean == other->primary().series[k].mean);
      CHECK(one.primary().series[k].stderr_ == other->primary().series[k].stderr_);
    }
    CHECK(one.primary().born_counts == other->primary().born_counts);
    CHECK(one.primary().terminal_variance == other->primary().terminal_variance);
  }
}

TEST_CASE("degenerate level converges to its Luders state") {
  EnsembleConfig cfg(HermitianOperator(diag({0, 0, 1})), instance_c(), TimeGrid::make(120.0, 0.01));
  cfg.n_paths = 500;
  cfg.checks = {"luders"};
  const auto s = run_ensemble(cfg);
  const auto& lo = s.primary().luders;
  CHECK(lo[0].expected_purity == doctest::Approx(0.5 * 0.5 + 0.5 * 0.5 + 2 * (0.1 / 0.6) * (0.1 / 0.6)));
  CHECK(lo[1].expected_purity == doctest::Approx(1.0));
  CHECK(lo[0].count + lo[1].count == 500);
  CHECK_MESSAGE(verdict(s, "luders").passed, describe(verdict(s, "luders")));
}

TEST_CASE("variance decay and mean-state agreement on the two-level instance") {
  EnsembleConfig cfg(HermitianOperator(diag({0, 1})), instance_a(), TimeGrid::make(120.0, 0.01));
  cfg.n_paths = 4000;
  cfg.base_seed = 21;
  cfg.checks = {"variance_decay", "lindblad", "martingales"};
  const auto s = run_ensemble(cfg);
  for (const auto& v : s.verdicts) CHECK_MESSAGE(v.passed, describe(v));
  REQUIRE(s.primary().mean_states.size() == 3);
  CHECK(s.primary().mean_states[1].t == doctest::Approx(1.0));
}

TEST_CASE("integrated and closed-form ensembles agree") {
  EnsembleConfig cfg(HermitianOperator(diag({0, 1})), instance_a(), TimeGrid::make(2.0, 0.001));
  cfg.n_paths = 400;
  cfg.mode = Mode::Both;
  cfg.record_every = 100;
  cfg.checks = {"lindblad", "martingales"};
  const auto s = run_ensemble(cfg);
  REQUIRE(s.sources.size() == 2);
  CHECK(s.sources[0].source == "closed-form");
  CHECK(s.sources[1].source == "sde");
  const auto& exact = s.sources[0].find("H").mean;
  const auto& approx = s.sources[1].find("H").mean;
  for (std::size_t j = 0; j < exact.size(); ++j) CHECK(std::abs(exact[j] - approx[j]) < 5e-3);
  for (const auto& v : s.verdicts) CHECK_MESSAGE(v.passed, describe(v));

  cfg.mode = Mode::Sde;
  const auto sde = run_ensemble(cfg);
  CHECK(sde.sources.size() == 1);
  CHECK(sde.primary().source == "sde");
  for (const auto& v : sde.verdicts) CHECK_MESSAGE(v.passed, describe(v));
}

TEST_CASE("a failing path aborts the run and names the path") {
  EnsembleConfig cfg(HermitianOperator(diag({0, 1})), DensityMatrix::pure(ComplexVector::Constant(2, std::sqrt(0.5))),
                     TimeGrid::make(1.0, 0.01));
  cfg.mode = Mode::Sde;
  cfg.n_paths = 10;
  try {
    run_ensemble(cfg);
    FAIL("expected a step divergence");
  } catch (const LabError& e) {
    CHECK(e.kind() == ErrorKind::StepDivergence);
    CHECK(std::string(e.what()).find("path ") != std::string::npos);
  }
}
