#include "reduction/acceptance.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <ostream>
#include <random>
#include <sstream>

#include "reduction/commands.hpp"
#include "reduction/errors.hpp"
#include "reduction/filtering.hpp"

namespace reduction {

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double x, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << x;
  return os.str();
}

const Verdict* find_verdict(const EnsembleSummary& s, const std::string& name) {
  for (const auto& v : s.verdicts) {
    if (v.check == name) return &v;
  }
  return nullptr;
}

const CheckItem* find_item(const Verdict& v, const std::string& label) {
  for (const auto& item : v.items) {
    if (item.label == label) return &item;
  }
  return nullptr;
}

EnsembleSummary ensemble(const RunConfig& cfg) { return run_ensemble(ensemble_config(cfg, build_model(cfg))); }

CriterionResult oracle_equivalence() {
  const auto start = Clock::now();
  CriterionResult r{1, "closed form vs integrator on a shared path", "", "", false, 0.0};
  const RunConfig cfg = reference_instance('B');
  const Model model = build_model(cfg);
  const double t_max = 2.0;
  const double coarse = 1e-3;
  const std::size_t finest = 4;
  const TimeGrid fine = TimeGrid::make(t_max, coarse / static_cast<double>(finest));
  RandomStream rng(1);
  const std::size_t level = sample_terminal_energy(model.rho0, model.spec, rng);
  const auto fine_path = make_information_path(level, model.spec, cfg.sigma, fine, rng);

  std::vector<double> errors;
  for (std::size_t stride : {finest, finest / 2}) {
    const TimeGrid grid = TimeGrid::make(t_max, fine.dt * static_cast<double>(stride));
    std::vector<double> db(grid.n_steps);
    for (std::size_t k = 0; k < grid.n_steps; ++k) db[k] = fine_path.b[(k + 1) * stride] - fine_path.b[k * stride];
    const auto path = information_path_from_increments(level, model.spec, cfg.sigma, grid, db);
    const auto w = recovered_brownian(path, model.rho0, model.spec, cfg.sigma);
    std::vector<double> dw(grid.n_steps);
    for (std::size_t k = 0; k < grid.n_steps; ++k) dw[k] = w[k + 1] - w[k];
    const auto traj = simulate_sme(model.rho0, model.hamiltonian, model.spec, cfg.sigma, cfg.hbar, grid, dw);
    double err = 0.0;
    for (std::size_t k = 0; k <= grid.n_steps; ++k) {
      const auto exact = closed_form_state(model.rho0, model.spec, cfg.sigma, cfg.hbar, grid.time(k), path.xi[k]);
      err = std::max(err, (traj.states[k].matrix() - exact.matrix()).cwiseAbs().maxCoeff());
    }
    errors.push_back(err);
  }
  const double ratio = errors[1] / errors[0];
  r.seconds = seconds_since(start);
  r.measured = "max error " + fmt(errors[0]) + " at dt=1e-3, ratio " + fmt(ratio, 3) + " on halving";
  r.threshold = "error < 5e-3, ratio in [0.35, 0.75], < 10 s";
  r.passed = errors[0] < 5e-3 && ratio >= 0.35 && ratio <= 0.75 && r.seconds < 10.0;
  return r;
}

struct BRun {
  EnsembleSummary summary;
  double seconds = 0.0;
};

BRun born_run() {
  RunConfig cfg = reference_instance('B');
  cfg.n_paths = 10000;
  cfg.seed = 2;
  cfg.checks = {"born", "martingales", "decoherence", "terminal_moments"};
  const auto start = Clock::now();
  BRun run{ensemble(cfg), 0.0};
  run.seconds = seconds_since(start);
  return run;
}

CriterionResult born_rule(const BRun& run) {
  CriterionResult r{2, "Born rule on instance B, 1e4 paths", "", "", false, run.seconds};
  const auto& src = run.summary.primary();
  const Verdict* v = find_verdict(run.summary, "born");
  std::ostringstream m;
  m << "frequencies (" << fmt(src.born_frequencies[0]) << ", " << fmt(src.born_frequencies[1]) << ", "
    << fmt(src.born_frequencies[2]) << ")";
  r.measured = m.str();
  r.threshold = "within 3 binomial stderr of (0.25, 0.25, 0.5), < 60 s";
  r.passed = v && v->passed && run.seconds < 60.0;
  return r;
}

CriterionResult terminal_moments(const BRun& run) {
  CriterionResult r{3, "energy martingale and terminal moments on instance B", "", "", false, run.seconds};
  const auto& src = run.summary.primary();
  const Verdict* tm = find_verdict(run.summary, "terminal_moments");
  const Verdict* mart = find_verdict(run.summary, "martingales");
  const CheckItem* h = mart ? find_item(*mart, "H") : nullptr;
  std::ostringstream m;
  m << "mean H_T " << fmt(src.terminal_mean, 6) << " +- " << fmt(src.terminal_mean_stderr, 2) << ", var H_T "
    << fmt(src.terminal_variance, 6) << " +- " << fmt(src.terminal_variance_stderr, 2);
  r.measured = m.str();
  r.threshold = "|mean - 1.25| and |var - 0.6875| <= 3 stderr; mean H_t constant";
  const bool targets = std::abs(run.summary.initial_energy - 1.25) < 1e-12 &&
                       std::abs(run.summary.initial_variance - 0.6875) < 1e-12;
  r.passed = targets && tm && tm->passed && h && h->passed;
  return r;
}

CriterionResult variance_decay() {
  const auto start = Clock::now();
  CriterionResult r{4, "variance decay on instance A", "", "", false, 0.0};
  RunConfig cfg = reference_instance('A');
  cfg.t_max = 120.0;
  cfg.n_paths = 10000;
  cfg.seed = 4;
  cfg.checks = {"variance_decay"};
  const auto s = ensemble(cfg);
  const Verdict* v = find_verdict(s, "variance_decay");
  r.seconds = seconds_since(start);
  if (v) {
    const CheckItem* bound = find_item(*v, "mean V under bound");
    const CheckItem* terminal = find_item(*v, "terminal mean V");
    std::ostringstream m;
    m << "worst excess over bound " << fmt(bound->measured, 3) << " (allowed " << fmt(bound->threshold, 3)
      << "), terminal mean V " << fmt(terminal->measured, 3);
    r.measured = m.str();
    r.passed = v->passed;
  }
  r.threshold = "mean V_t <= V0/(1+V0 t) + 3 stderr everywhere, terminal < 1e-6";
  return r;
}

CriterionResult lindblad_mean() {
  const auto start = Clock::now();
  CriterionResult r{5, "ensemble mean state vs RK4 mean equation on instance A", "", "", false, 0.0};
  RunConfig cfg = reference_instance('A');
  cfg.t_max = 2.0;
  cfg.n_paths = 10000;
  cfg.seed = 5;
  cfg.checks = {"lindblad"};
  cfg.lindblad_times = {0.5, 1.0, 2.0};
  const auto s = ensemble(cfg);
  const Verdict* v = find_verdict(s, "lindblad");
  r.seconds = seconds_since(start);
  std::ostringstream m;
  if (v) {
    for (const auto& item : v->items) {
      m << (m.tellp() > 0 ? "; " : "") << item.label.substr(item.label.find("t = ")) << ": " << fmt(item.measured, 2)
        << "/" << fmt(item.threshold, 2);
    }
    r.passed = v->passed && v->items.size() == 3;
  }
  r.measured = "worst |mean - rk4| / allowed: " + m.str();
  r.threshold = "entrywise <= 3 stderr at t = 0.5, 1, 2";
  return r;
}

CriterionResult decoherence(const BRun& run) {
  CriterionResult r{6, "decoherence rates on instance B", "", "", false, run.seconds};
  const auto fits = fit_decoherence(run.summary);
  const Verdict* v = find_verdict(run.summary, "decoherence");
  std::ostringstream m;
  double wide = 0.0;
  std::vector<double> narrow;
  for (const auto& f : fits) {
    m << "(" << f.pair.first + 1 << "," << f.pair.second + 1 << ") " << fmt(f.slope) << " vs " << fmt(f.expected)
      << "; ";
    const double gap = run.summary.energies[f.pair.second] - run.summary.energies[f.pair.first];
    if (std::abs(gap - 2.0) < 1e-12) wide = f.slope;
    if (std::abs(gap - 1.0) < 1e-12) narrow.push_back(f.slope);
  }
  bool ratios = !narrow.empty() && wide != 0.0;
  for (double s : narrow) {
    const double ratio = wide / s;
    m << "ratio " << fmt(ratio, 3) << "; ";
    ratios = ratios && std::abs(ratio - 4.0) <= 0.4;
  }
  r.measured = m.str();
  r.threshold = "slopes within 10% of -dE^2/8; dE=2 slope 4.0 +- 0.4 times dE=1 slope";
  r.passed = v && v->passed && fits.size() == 3 && ratios;
  return r;
}

CriterionResult luders_outcome() {
  const auto start = Clock::now();
  CriterionResult r{7, "Luders outcome on degenerate instance C", "", "", false, 0.0};
  RunConfig cfg = reference_instance('C');
  cfg.t_max = 120.0;
  cfg.n_paths = 2000;
  cfg.seed = 7;
  cfg.checks = {"luders"};
  const Model model = build_model(cfg);
  const auto s = run_ensemble(ensemble_config(cfg, model));
  r.seconds = seconds_since(start);

  ComplexMatrix half = ComplexMatrix::Zero(3, 3);
  half(0, 0) = half(1, 1) = 0.5;
  ComplexMatrix top = ComplexMatrix::Zero(3, 3);
  top(2, 2) = 1.0;
  const double target_gap = std::max(trace_distance(luders_state(model.rho0, model.spec, 0).matrix(), half),
                                     trace_distance(luders_state(model.rho0, model.spec, 1).matrix(), top));
  const auto& lo = s.primary().luders;
  std::ostringstream m;
  m << "level 1: distance " << fmt(lo[0].mean_distance, 3) << ", purity " << fmt(lo[0].mean_purity, 6)
    << "; level 2: distance " << fmt(lo[1].mean_distance, 3) << ", purity " << fmt(lo[1].mean_purity, 6);
  r.measured = m.str();
  r.threshold = "distance < 1e-4; purity 0.5 +- 1e-3 and 1 +- 1e-3";
  const Verdict* v = find_verdict(s, "luders");
  r.passed = v && v->passed && target_gap < 1e-12 && lo[0].count > 0 && lo[1].count > 0 &&
             lo[0].mean_distance < 1e-4 && std::abs(lo[0].mean_purity - 0.5) <= 1e-3 &&
             lo[1].mean_distance < 1e-4 && std::abs(lo[1].mean_purity - 1.0) <= 1e-3;
  return r;
}

ComplexMatrix random_unitary(std::mt19937_64& gen, Eigen::Index n) {
  std::normal_distribution<double> normal;
  ComplexMatrix z(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) z(i, j) = Complex(normal(gen), normal(gen));
  }
  Eigen::HouseholderQR<ComplexMatrix> qr(z);
  return qr.householderQ() * ComplexMatrix::Identity(n, n);
}

CriterionResult internal_consistency() {
  const auto start = Clock::now();
  CriterionResult r{8, "Luders-state decomposition equals the closed form", "", "", false, 0.0};
  std::mt19937_64 gen(8);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index n = 1 + trial % 6;
    // Small integer spectra make degenerate levels common.
    ComplexVector e(n);
    for (Eigen::Index i = 0; i < n; ++i) e(i) = std::floor(4.0 * uniform(gen)) - 1.0;
    const ComplexMatrix u = random_unitary(gen, n);
    const HermitianOperator h(hermitize(u * e.asDiagonal() * u.adjoint()));
    const auto spec = spectral_decompose(h);
    const Eigen::Index rank = 1 + trial % n;
    ComplexMatrix g(n, rank);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < rank; ++j) g(i, j) = Complex(normal(gen), normal(gen));
    }
    ComplexMatrix w = g * g.adjoint();
    const auto rho0 = validate_density(hermitize(w / w.trace().real()));
    const double t = 5.0 * uniform(gen);
    const double xi = t * normal(gen) + 2.0 * normal(gen);
    const double sigma = 0.5 + uniform(gen);
    const double hbar = 0.5 + uniform(gen);
    const auto a = closed_form_state(rho0, spec, sigma, hbar, t, xi);
    const auto b = state_decomposition(rho0, spec, sigma, hbar, t, xi);
    worst = std::max(worst, (a.matrix() - b.matrix()).cwiseAbs().maxCoeff());
  }
  r.seconds = seconds_since(start);
  r.measured = "max entrywise difference " + fmt(worst, 3) + " over 100 instances";
  r.threshold = "< 1e-10";
  r.passed = worst < 1e-10;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

CriterionResult determinism(const fs::path& work) {
  const auto start = Clock::now();
  CriterionResult r{9, "byte-identical outputs across runs and thread counts", "", "", false, 0.0};
  RunConfig sim = reference_instance('B');
  sim.t_max = 2.0;
  sim.mode = Mode::Both;
  sim.seed = 9;
  RunConfig ens = reference_instance('B');
  ens.t_max = 5.0;
  ens.n_paths = 1000;
  ens.seed = 9;
  ens.mode = Mode::Both;
  ens.record_every = 50;

  std::vector<std::vector<std::string>> runs;
  std::size_t files = 0;
  for (std::size_t threads : {1u, 4u, 1u, 3u}) {
    const fs::path dir = work / "run";
    fs::remove_all(dir);
    sim.output_dir = (dir / "simulate").string();
    ens.output_dir = (dir / "ensemble").string();
    sim.threads = threads;
    ens.threads = threads;
    std::vector<std::string> contents;
    for (const auto& f : cmd_simulate(sim)) contents.push_back(slurp(f));
    for (const auto& f : cmd_ensemble(ens).files) contents.push_back(slurp(f));
    files = contents.size();
    runs.push_back(std::move(contents));
  }
  std::size_t mismatches = 0;
  for (std::size_t k = 1; k < runs.size(); ++k) {
    for (std::size_t f = 0; f < files; ++f) mismatches += runs[k][f] != runs[0][f];
  }
  fs::remove_all(work);
  r.seconds = seconds_since(start);
  r.measured = std::to_string(mismatches) + " differing files of " + std::to_string(files) + " across " +
               std::to_string(runs.size()) + " runs (threads 1, 4, 1, 3)";
  r.threshold = "0 differing files";
  r.passed = mismatches == 0 && files == 5;
  return r;
}

CriterionResult negative_controls() {
  const auto start = Clock::now();
  CriterionResult r{10, "negative controls are detected", "", "", false, 0.0};
  RunConfig drift = reference_instance('B');
  drift.n_paths = 4000;
  drift.seed = 10;
  drift.drift_scale = 2.0;
  drift.checks = {"martingales"};
  const auto a = ensemble(drift);
  RunConfig tilt = reference_instance('B');
  tilt.n_paths = 4000;
  tilt.seed = 10;
  tilt.level_weights = {1.0, 1.0, 1.5};
  tilt.checks = {"born"};
  const auto b = ensemble(tilt);
  const Verdict* va = find_verdict(a, "martingales");
  const Verdict* vb = find_verdict(b, "born");
  r.seconds = seconds_since(start);
  std::ostringstream m;
  m << "doubled drift: martingales " << (va && va->passed ? "pass" : "fail") << " (terminal mean H "
    << fmt(a.primary().terminal_mean) << "); tilted sampler: born " << (vb && vb->passed ? "pass" : "fail");
  r.measured = m.str();
  r.threshold = "both checks fail";
  r.passed = va && !va->passed && vb && !vb->passed;
  return r;
}

bool wanted(const AcceptanceOptions& o, int id) {
  return o.only.empty() || std::find(o.only.begin(), o.only.end(), id) != o.only.end();
}

template <typename F>
void guarded(std::vector<CriterionResult>& out, int id, const char* claim, F&& f) {
  try {
    out.push_back(f());
  } catch (const std::exception& e) {
    out.push_back(CriterionResult{id, claim, std::string("error: ") + e.what(), "", false, 0.0});
  }
}

}  // namespace

RunConfig reference_instance(char name) {
  RunConfig cfg;
  cfg.sigma = 1.0;
  cfg.hbar = 1.0;
  cfg.dt = 1e-3;
  switch (name) {
    case 'A': {
      cfg.eigenvalues = {0.0, 1.0};
      cfg.rho0 = ComplexMatrix::Zero(2, 2);
      cfg.rho0 << 0.5, 0.25, 0.25, 0.5;
      break;
    }
    case 'B': {
      cfg.eigenvalues = {0.0, 1.0, 2.0};
      ComplexMatrix r = ComplexMatrix::Zero(3, 3);
      r(0, 0) = 0.25;
      r(1, 1) = 0.25;
      r(2, 2) = 0.5;
      r(0, 1) = Complex(0.1, 0.05);
      r(0, 2) = Complex(0.1, 0.0);
      r(1, 2) = Complex(0.05, -0.1);
      r(1, 0) = std::conj(r(0, 1));
      r(2, 0) = std::conj(r(0, 2));
      r(2, 1) = std::conj(r(1, 2));
      cfg.rho0 = r;
      break;
    }
    case 'C': {
      cfg.eigenvalues = {0.0, 0.0, 1.0};
      ComplexMatrix r = ComplexMatrix::Zero(3, 3);
      r(0, 0) = 0.3;
      r(1, 1) = 0.3;
      r(2, 2) = 0.4;
      r(0, 2) = r(2, 0) = 0.1;
      r(1, 2) = r(2, 1) = 0.1;
      cfg.rho0 = r;
      break;
    }
    default:
      throw LabError(ErrorKind::ValidationError, std::string("no reference instance '") + name + "'");
  }
  return cfg;
}

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options) {
  std::vector<CriterionResult> out;
  if (wanted(options, 1)) guarded(out, 1, "oracle equivalence", oracle_equivalence);
  if (wanted(options, 2) || wanted(options, 3) || wanted(options, 6)) {
    std::optional<BRun> run;
    std::string failure;
    try {
      run = born_run();
    } catch (const std::exception& e) {
      failure = std::string("error: ") + e.what();
    }
    const auto add = [&](int id, const char* claim, CriterionResult (*f)(const BRun&)) {
      if (!wanted(options, id)) return;
      if (run) {
        out.push_back(f(*run));
      } else {
        out.push_back(CriterionResult{id, claim, failure, "", false, 0.0});
      }
    };
    add(2, "Born rule", born_rule);
    add(3, "terminal moments", terminal_moments);
    add(6, "decoherence rates", decoherence);
  }
  if (wanted(options, 4)) guarded(out, 4, "variance decay", variance_decay);
  if (wanted(options, 5)) guarded(out, 5, "Lindblad mean", lindblad_mean);
  if (wanted(options, 7)) guarded(out, 7, "Luders outcome", luders_outcome);
  if (wanted(options, 8)) guarded(out, 8, "internal consistency", internal_consistency);
  if (wanted(options, 9)) guarded(out, 9, "determinism", [&] { return determinism(options.work_dir); });
  if (wanted(options, 10)) guarded(out, 10, "negative controls", negative_controls);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

void print_acceptance(std::ostream& out, const std::vector<CriterionResult>& results) {
  for (const auto& r : results) {
    out << (r.passed ? "PASS" : "FAIL") << "  criterion " << std::setw(2) << r.id << "  " << r.claim << " | measured: "
        << r.measured << " | threshold: " << r.threshold << " | " << std::fixed << std::setprecision(2) << r.seconds
        << " s" << std::defaultfloat << '\n';
  }
}

}  // namespace reduction
