#include "reduction/ensemble.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <optional>
#include <sstream>
#include <thread>

#include "reduction/errors.hpp"

namespace reduction {

namespace {

constexpr std::size_t kChunk = 64;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Context {
  const EnsembleConfig& cfg;
  SpectralDecomposition spec;
  FilterModel model;
  std::vector<double> energies;
  std::vector<double> sampling;
  std::vector<LevelPair> pairs;
  std::vector<double> pair_rate;        // sigma^2 dE^2 / 8
  std::vector<double> initial_blocks;   // |P_n rho0 P_m|
  std::vector<std::optional<DensityMatrix>> luders;
  std::vector<std::size_t> record_steps;
  std::vector<double> times;
  std::vector<std::ptrdiff_t> mean_state_slot;  // per record, -1 if none
  std::vector<double> mean_state_times;
  std::size_t series_count = 0;
  Eigen::Index dim = 0;

  Context(const EnsembleConfig& c, SpectralDecomposition s)
      : cfg(c), spec(std::move(s)), model(c.rho0, spec, c.sigma, c.hbar) {}
};

struct SourceAcc {
  std::vector<RunningStat> series;  // series_count x records
  std::vector<std::size_t> born;
  std::vector<RunningStat> distance;
  std::vector<RunningStat> purity;
  std::vector<RunningStat> states;  // slots x dim x dim x {re, im}
  std::vector<double> terminal;

  void init(const Context& ctx) {
    series.assign(ctx.series_count * ctx.times.size(), RunningStat{});
    born.assign(ctx.energies.size(), 0);
    distance.assign(ctx.energies.size(), RunningStat{});
    purity.assign(ctx.energies.size(), RunningStat{});
    states.assign(ctx.mean_state_times.size() * static_cast<std::size_t>(ctx.dim * ctx.dim) * 2, RunningStat{});
    terminal.clear();
  }

  void merge(const SourceAcc& other) {
    for (std::size_t i = 0; i < series.size(); ++i) series[i].merge(other.series[i]);
    for (std::size_t i = 0; i < born.size(); ++i) born[i] += other.born[i];
    for (std::size_t i = 0; i < distance.size(); ++i) {
      distance[i].merge(other.distance[i]);
      purity[i].merge(other.purity[i]);
    }
    for (std::size_t i = 0; i < states.size(); ++i) states[i].merge(other.states[i]);
    terminal.insert(terminal.end(), other.terminal.begin(), other.terminal.end());
  }
};

struct ChunkResult {
  std::vector<SourceAcc> sources;
  std::optional<LabError> error;
};

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

class Recorder {
 public:
  Recorder(const Context& ctx, SourceAcc& acc) : ctx_(ctx), acc_(acc) {}

  void scalars(std::size_t j, double h, double v, double purity, const std::vector<double>& probs) {
    add(0, j, h);
    add(1, j, v);
    add(2, j, purity);
    for (std::size_t r = 0; r < probs.size(); ++r) add(3 + r, j, probs[r]);
  }

  void pair(std::size_t j, std::size_t p, double phi) {
    const std::size_t base = 3 + ctx_.energies.size();
    add(base + p, j, phi);
    add(base + ctx_.pairs.size() + p, j, phi * std::exp(ctx_.pair_rate[p] * ctx_.times[j]));
  }

  void state(std::size_t j, const ComplexMatrix& rho) {
    const std::ptrdiff_t slot = ctx_.mean_state_slot[j];
    if (slot < 0) return;
    const std::size_t n = static_cast<std::size_t>(ctx_.dim);
    const std::size_t base = static_cast<std::size_t>(slot) * n * n * 2;
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = 0; b < n; ++b) {
        const Complex z = rho(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        acc_.states[base + 2 * (a * n + b)].add(z.real());
        acc_.states[base + 2 * (a * n + b) + 1].add(z.imag());
      }
    }
  }

  void terminal(std::size_t outcome, std::size_t condition, const ComplexMatrix& rho, double purity, double energy) {
    ++acc_.born[outcome];
    if (ctx_.luders[condition]) {
      acc_.distance[condition].add(trace_distance(rho, ctx_.luders[condition]->matrix()));
      acc_.purity[condition].add(purity);
    }
    acc_.terminal.push_back(energy);
  }

 private:
  void add(std::size_t s, std::size_t j, double x) { acc_.series[s * ctx_.times.size() + j].add(x); }

  const Context& ctx_;
  SourceAcc& acc_;
};

void observe_filter(const Context& ctx, Recorder& rec, std::size_t j, double xi, FilterModel::Snapshot& snap) {
  const double t = ctx.times[j];
  ctx.model.evaluate(t, xi, snap);
  if (!std::isfinite(snap.log_norm)) throw LabError(ErrorKind::NonFiniteInput, "closed-form normalizer diverged");
  rec.scalars(j, snap.energy, snap.variance, snap.purity, snap.probabilities);
  for (std::size_t p = 0; p < ctx.pairs.size(); ++p) {
    const auto [n, m] = ctx.pairs[p];
    rec.pair(j, p, std::exp(ctx.model.log_phi(n, m, t, xi, snap)));
  }
  if (ctx.mean_state_slot[j] >= 0) rec.state(j, ctx.model.state(t, xi, snap));
}

void observe_state(const Context& ctx, Recorder& rec, std::size_t j, const DensityMatrix& rho) {
  const auto mom = moments(rho, ctx.cfg.hamiltonian);
  rec.scalars(j, mom.mean, mom.variance, rho.purity(), level_probabilities(rho, ctx.spec));
  for (std::size_t p = 0; p < ctx.pairs.size(); ++p) {
    const auto [n, m] = ctx.pairs[p];
    if (ctx.initial_blocks[p] <= ctx.cfg.tolerances.luders_floor) {
      rec.pair(j, p, kNaN);
      continue;
    }
    const ComplexMatrix block = ctx.spec.levels[n].projector * rho.matrix() * ctx.spec.levels[m].projector;
    rec.pair(j, p, block.norm() / ctx.initial_blocks[p]);
  }
  rec.state(j, rho.matrix());
}

void closed_form_terminal(const Context& ctx, Recorder& rec, std::size_t level, double xi,
                          FilterModel::Snapshot& snap) {
  const double t = ctx.times.back();
  ctx.model.evaluate(t, xi, snap);
  const ComplexMatrix rho = t == 0.0 ? ctx.cfg.rho0.matrix() : ctx.model.state(t, xi, snap);
  rec.terminal(argmax(snap.probabilities), level, rho, snap.purity, snap.energy);
}

void sde_terminal(const Context& ctx, Recorder& rec, const DensityMatrix& rho) {
  const auto probs = level_probabilities(rho, ctx.spec);
  const std::size_t outcome = argmax(probs);
  rec.terminal(outcome, outcome, rho.matrix(), rho.purity(), moments(rho, ctx.cfg.hamiltonian).mean);
}

DensityMatrix advance_sme(const Context& ctx, const DensityMatrix& rho, double dw, std::size_t k) {
  try {
    return sme_step(rho, ctx.cfg.hamiltonian, ctx.cfg.sigma, ctx.cfg.hbar, ctx.cfg.grid.dt, dw, ctx.cfg.tolerances);
  } catch (const LabError& e) {
    std::ostringstream os;
    os << "step " << k << ": " << e.what();
    throw LabError(ErrorKind::StepDivergence, os.str(), e.measured());
  }
}

void run_path(const Context& ctx, std::size_t index, std::vector<SourceAcc>& accs) {
  const EnsembleConfig& cfg = ctx.cfg;
  RandomStream rng = RandomStream::for_path(cfg.base_seed, index);
  FilterModel::Snapshot snap;

  if (cfg.mode == Mode::ClosedForm) {
    Recorder rec(ctx, accs[0]);
    const std::size_t level = sample_level(ctx.sampling, rng, cfg.tolerances);
    const double drift = cfg.drift_scale * cfg.sigma * ctx.energies[level];
    double xi = 0.0;
    for (std::size_t j = 0; j < ctx.times.size(); ++j) {
      if (j > 0) {
        const double dt = ctx.times[j] - ctx.times[j - 1];
        xi += drift * dt + std::sqrt(dt) * rng.normal();
      }
      observe_filter(ctx, rec, j, xi, snap);
    }
    closed_form_terminal(ctx, rec, level, xi, snap);
    return;
  }

  if (cfg.mode == Mode::Sde) {
    Recorder rec(ctx, accs[0]);
    const double scale = std::sqrt(cfg.grid.dt);
    DensityMatrix rho = cfg.rho0;
    std::size_t j = 0;
    for (std::size_t k = 0;; ++k) {
      if (ctx.record_steps[j] == k) observe_state(ctx, rec, j++, rho);
      if (k == cfg.grid.n_steps) break;
      rho = advance_sme(ctx, rho, scale * rng.normal(), k);
    }
    sde_terminal(ctx, rec, rho);
    return;
  }

  // Both: the SDE is driven by the Brownian motion recovered from the same
  // information path the closed form sees.
  Recorder exact(ctx, accs[0]);
  Recorder approx(ctx, accs[1]);
  const std::size_t level = sample_level(ctx.sampling, rng, cfg.tolerances);
  const auto path = make_information_path(level, ctx.spec, cfg.sigma, cfg.grid, rng, cfg.drift_scale);
  const auto w = recovered_brownian(path, cfg.rho0, ctx.spec, cfg.sigma);
  DensityMatrix rho = cfg.rho0;
  std::size_t j = 0;
  for (std::size_t k = 0;; ++k) {
    if (ctx.record_steps[j] == k) {
      observe_filter(ctx, exact, j, path.xi[k], snap);
      observe_state(ctx, approx, j, rho);
      ++j;
    }
    if (k == cfg.grid.n_steps) break;
    rho = advance_sme(ctx, rho, w[k + 1] - w[k], k);
  }
  closed_form_terminal(ctx, exact, level, path.xi.back(), snap);
  sde_terminal(ctx, approx, rho);
}

ChunkResult run_chunk(const Context& ctx, std::size_t chunk, std::size_t sources) {
  ChunkResult result;
  result.sources.resize(sources);
  for (auto& acc : result.sources) acc.init(ctx);
  const std::size_t begin = chunk * kChunk;
  const std::size_t end = std::min(ctx.cfg.n_paths, begin + kChunk);
  for (std::size_t i = begin; i < end; ++i) {
    try {
      run_path(ctx, i, result.sources);
    } catch (const LabError& e) {
      std::ostringstream os;
      os << "path " << i << ": " << e.message();
      result.error = LabError(e.kind(), os.str(), e.measured());
      return result;
    }
  }
  return result;
}

void build_records(Context& ctx) {
  const EnsembleConfig& cfg = ctx.cfg;
  const TimeGrid& grid = cfg.grid;
  std::size_t stride = cfg.record_every;
  if (stride == 0) stride = std::max<std::size_t>(1, grid.n_steps / 1000);

  std::vector<std::size_t> extra;
  for (double t : cfg.lindblad_times) {
    if (!(t >= 0.0) || t > grid.t_max * (1.0 + 1e-12)) continue;
    const double steps = std::round(t / grid.dt);
    if (std::abs(steps * grid.dt - t) > 1e-9 * std::max(1.0, t)) {
      std::ostringstream os;
      os << "lindblad time " << t << " is not on the grid with dt = " << grid.dt;
      throw LabError(ErrorKind::ValidationError, os.str());
    }
    extra.push_back(static_cast<std::size_t>(steps));
  }

  for (std::size_t k = 0; k < grid.n_steps; k += stride) ctx.record_steps.push_back(k);
  ctx.record_steps.push_back(grid.n_steps);
  ctx.record_steps.insert(ctx.record_steps.end(), extra.begin(), extra.end());
  std::sort(ctx.record_steps.begin(), ctx.record_steps.end());
  ctx.record_steps.erase(std::unique(ctx.record_steps.begin(), ctx.record_steps.end()), ctx.record_steps.end());

  for (std::size_t k : ctx.record_steps) ctx.times.push_back(grid.time(k));
  ctx.mean_state_slot.assign(ctx.record_steps.size(), -1);
  std::sort(extra.begin(), extra.end());
  extra.erase(std::unique(extra.begin(), extra.end()), extra.end());
  for (std::size_t k : extra) {
    const auto it = std::lower_bound(ctx.record_steps.begin(), ctx.record_steps.end(), k);
    ctx.mean_state_slot[static_cast<std::size_t>(it - ctx.record_steps.begin())] =
        static_cast<std::ptrdiff_t>(ctx.mean_state_times.size());
    ctx.mean_state_times.push_back(grid.time(k));
  }
}

std::string level_name(std::size_t r) { return std::to_string(r + 1); }

std::string pair_name(const char* prefix, const LevelPair& p) {
  return std::string(prefix) + "_" + level_name(p.first) + "_" + level_name(p.second);
}

SourceSummary summarize_source(const Context& ctx, const SourceAcc& acc, std::string name,
                               const std::vector<DensityMatrix>& reference) {
  SourceSummary out;
  out.source = std::move(name);
  std::vector<std::string> names{"H", "V", "purity"};
  for (std::size_t r = 0; r < ctx.energies.size(); ++r) names.push_back("pi_" + level_name(r));
  for (const auto& p : ctx.pairs) names.push_back(pair_name("Phi", p));
  for (const auto& p : ctx.pairs) names.push_back(pair_name("Pi", p));

  const std::size_t records = ctx.times.size();
  for (std::size_t s = 0; s < names.size(); ++s) {
    Series series{names[s], {}, {}};
    series.mean.reserve(records);
    series.stderr_.reserve(records);
    for (std::size_t j = 0; j < records; ++j) {
      const RunningStat& st = acc.series[s * records + j];
      series.mean.push_back(st.mean);
      series.stderr_.push_back(st.standard_error());
    }
    out.series.push_back(std::move(series));
  }

  const double n = static_cast<double>(ctx.cfg.n_paths);
  out.born_counts = acc.born;
  for (std::size_t c : acc.born) out.born_frequencies.push_back(static_cast<double>(c) / n);

  RunningStat terminal;
  for (double x : acc.terminal) terminal.add(x);
  out.terminal_mean = terminal.mean;
  out.terminal_mean_stderr = terminal.standard_error();
  out.terminal_variance = terminal.variance();
  double m4 = 0.0;
  for (double x : acc.terminal) {
    const double d = x - terminal.mean;
    m4 += d * d * d * d;
  }
  m4 /= n;
  const double s2 = out.terminal_variance;
  out.terminal_variance_stderr = acc.terminal.size() < 2 ? kNaN : std::sqrt(std::max(0.0, m4 - s2 * s2) / n);

  for (std::size_t r = 0; r < ctx.energies.size(); ++r) {
    LevelOutcome lo;
    lo.count = acc.distance[r].count;
    if (lo.count > 0) {
      lo.mean_distance = acc.distance[r].mean;
      lo.mean_purity = acc.purity[r].mean;
    }
    lo.expected_purity = ctx.luders[r] ? ctx.luders[r]->purity() : kNaN;
    out.luders.push_back(lo);
  }

  const Eigen::Index d = ctx.dim;
  for (std::size_t slot = 0; slot < ctx.mean_state_times.size(); ++slot) {
    MeanStateSample sample;
    sample.t = ctx.mean_state_times[slot];
    sample.mean.resize(d, d);
    sample.stderr_.resize(d, d);
    const std::size_t base = slot * static_cast<std::size_t>(d * d) * 2;
    for (Eigen::Index a = 0; a < d; ++a) {
      for (Eigen::Index b = 0; b < d; ++b) {
        const std::size_t at = base + 2 * static_cast<std::size_t>(a * d + b);
        sample.mean(a, b) = Complex(acc.states[at].mean, acc.states[at + 1].mean);
        sample.stderr_(a, b) = Complex(acc.states[at].standard_error(), acc.states[at + 1].standard_error());
      }
    }
    sample.reference = reference[slot].matrix();
    out.mean_states.push_back(std::move(sample));
  }
  return out;
}

std::vector<DensityMatrix> lindblad_reference(const Context& ctx) {
  if (ctx.mean_state_times.empty()) return {};
  const EnsembleConfig& cfg = ctx.cfg;
  const double last = ctx.mean_state_times.back();
  const auto steps = static_cast<std::size_t>(std::round(last / cfg.grid.dt));
  const TimeGrid grid{static_cast<double>(steps) * cfg.grid.dt, cfg.grid.dt, steps};
  const auto path = integrate_lindblad(cfg.rho0, cfg.hamiltonian, cfg.sigma, cfg.hbar, grid, cfg.tolerances);
  std::vector<DensityMatrix> out;
  for (double t : ctx.mean_state_times) out.push_back(path[static_cast<std::size_t>(std::round(t / cfg.grid.dt))]);
  return out;
}

// Verdict helpers.

Verdict finish(std::string name, std::vector<CheckItem> items, std::string note = {}) {
  Verdict v;
  v.check = std::move(name);
  v.items = std::move(items);
  v.note = std::move(note);
  v.passed = !v.items.empty();
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& item : v.items) {
    v.passed = v.passed && item.passed;
    double ratio = item.threshold > 0.0 ? item.measured / item.threshold
                                        : (item.measured > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    if (std::isnan(ratio)) ratio = std::numeric_limits<double>::infinity();
    if (ratio > worst) {
      worst = ratio;
      v.statistic = item.measured;
      v.threshold = item.threshold;
    }
  }
  if (v.items.empty() && v.note.empty()) v.note = "nothing to check";
  return v;
}

std::optional<Verdict> require_paths(const char* name, const EnsembleSummary& s) {
  if (s.n_paths >= 100 && s.stderr_defined) return std::nullopt;
  Verdict v;
  v.check = name;
  v.passed = false;
  v.statistic = static_cast<double>(s.n_paths);
  v.threshold = 100.0;
  v.note = "confidence bands need n_paths >= 100";
  return v;
}

CheckItem make_item(std::string label, double measured, double threshold) {
  CheckItem item{std::move(label), measured, threshold, false};
  item.passed = std::isfinite(measured) && measured <= threshold;
  return item;
}

// Worst point of |mean - target| <= c stderr + floor over records [0, limit).
CheckItem constant_series(const Series& series, double target, double c, double floor, std::size_t limit) {
  CheckItem worst{series.name, 0.0, floor, true};
  double worst_ratio = -1.0;
  for (std::size_t j = 0; j < std::min(limit, series.mean.size()); ++j) {
    const double diff = std::abs(series.mean[j] - target);
    const double thr = c * series.stderr_[j] + floor;
    const double ratio = diff / thr;
    if (!(ratio <= worst_ratio)) {
      worst_ratio = std::isnan(ratio) ? std::numeric_limits<double>::infinity() : ratio;
      worst = make_item(series.name, diff, thr);
    }
    if (!(diff <= thr)) worst.passed = false;
  }
  return worst;
}

bool has_values(const Series& s) {
  return std::none_of(s.mean.begin(), s.mean.end(), [](double x) { return std::isnan(x); });
}

}  // namespace

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::Sde:
      return "sde";
    case Mode::ClosedForm:
      return "closed-form";
    case Mode::Both:
      return "both";
  }
  return "unknown";
}

Mode parse_mode(std::string_view text) {
  if (text == "sde") return Mode::Sde;
  if (text == "closed-form") return Mode::ClosedForm;
  if (text == "both") return Mode::Both;
  throw LabError(ErrorKind::ValidationError, "mode must be one of sde, closed-form, both; got '" +
                                                 std::string(text) + "'");
}

const std::vector<std::string>& known_checks() {
  static const std::vector<std::string> names{"born",       "martingales", "variance_decay",  "decoherence",
                                              "luders",     "lindblad",    "terminal_moments"};
  return names;
}

std::size_t resolve_threads(std::size_t requested) {
  std::size_t threads = requested;
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("REDUCTION_LAB_THREADS")) {
    std::size_t cap = 0;
    const std::string_view text(env);
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), cap);
    if (ec == std::errc() && ptr == text.data() + text.size() && cap > 0) threads = std::min(threads, cap);
  }
  return threads;
}

void RunningStat::add(double x) noexcept {
  ++count;
  const double delta = x - mean;
  mean += delta / static_cast<double>(count);
  m2 += delta * (x - mean);
}

void RunningStat::merge(const RunningStat& other) noexcept {
  if (other.count == 0) return;
  if (count == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(count);
  const double nb = static_cast<double>(other.count);
  const double n = na + nb;
  const double delta = other.mean - mean;
  mean += delta * nb / n;
  m2 += other.m2 + delta * delta * na * nb / n;
  count += other.count;
}

double RunningStat::variance() const noexcept {
  if (count < 2) return kNaN;
  return std::max(0.0, m2 / static_cast<double>(count - 1));
}

double RunningStat::standard_error() const noexcept {
  if (count < 2) return kNaN;
  return std::sqrt(variance() / static_cast<double>(count));
}

const Series& SourceSummary::find(std::string_view name) const {
  for (const auto& s : series) {
    if (s.name == name) return s;
  }
  throw LabError(ErrorKind::ValidationError, "no series named '" + std::string(name) + "'");
}

bool EnsembleSummary::all_passed() const {
  return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.passed; });
}

EnsembleSummary run_ensemble(const EnsembleConfig& cfg) {
  if (cfg.hamiltonian.dim() != cfg.rho0.dim()) {
    throw LabError(ErrorKind::DimensionMismatch, "hamiltonian and rho0 dimensions differ");
  }
  if (cfg.n_paths == 0) throw LabError(ErrorKind::ValidationError, "n_paths must be at least 1");
  if (!(cfg.sigma >= 0.0) || !std::isfinite(cfg.sigma)) {
    throw LabError(ErrorKind::ValidationError, "sigma must be nonnegative", cfg.sigma);
  }
  if (!(cfg.hbar > 0.0) || !std::isfinite(cfg.hbar)) {
    throw LabError(ErrorKind::ValidationError, "hbar must be positive", cfg.hbar);
  }
  if (!(cfg.ci_multiplier > 0.0)) {
    throw LabError(ErrorKind::ValidationError, "ci_multiplier must be positive", cfg.ci_multiplier);
  }
  for (const auto& name : cfg.checks) {
    if (std::find(known_checks().begin(), known_checks().end(), name) == known_checks().end()) {
      throw LabError(ErrorKind::ValidationError, "unknown check '" + name + "'");
    }
  }

  Context ctx(cfg, spectral_decompose(cfg.hamiltonian, std::nullopt, cfg.tolerances));
  ctx.dim = cfg.rho0.dim();
  ctx.energies = ctx.spec.energies();
  const auto prior = level_probabilities(cfg.rho0, ctx.spec);
  ctx.sampling = prior;
  if (!cfg.level_weights.empty()) {
    if (cfg.level_weights.size() != prior.size()) {
      throw LabError(ErrorKind::DimensionMismatch, "level_weights needs one entry per energy level");
    }
    for (std::size_t r = 0; r < prior.size(); ++r) ctx.sampling[r] *= cfg.level_weights[r];
  }
  ctx.pairs = level_pairs(ctx.spec.size());
  for (const auto& [n, m] : ctx.pairs) {
    const double gap = ctx.energies[n] - ctx.energies[m];
    ctx.pair_rate.push_back(cfg.sigma * cfg.sigma * gap * gap / 8.0);
    const ComplexMatrix block = ctx.spec.levels[n].projector * cfg.rho0.matrix() * ctx.spec.levels[m].projector;
    ctx.initial_blocks.push_back(block.norm());
  }
  for (std::size_t r = 0; r < ctx.spec.size(); ++r) {
    if (prior[r] > cfg.tolerances.luders_floor) {
      ctx.luders.emplace_back(luders_state(cfg.rho0, ctx.spec, r, cfg.tolerances));
    } else {
      ctx.luders.emplace_back(std::nullopt);
    }
  }
  ctx.series_count = 3 + ctx.energies.size() + 2 * ctx.pairs.size();
  build_records(ctx);
  const auto reference = lindblad_reference(ctx);

  const std::size_t n_sources = cfg.mode == Mode::Both ? 2 : 1;
  std::vector<SourceAcc> total(n_sources);
  for (auto& acc : total) acc.init(ctx);

  const std::size_t chunks = (cfg.n_paths + kChunk - 1) / kChunk;
  const std::size_t threads = std::min(resolve_threads(cfg.threads), chunks);
  for (std::size_t wave = 0; wave < chunks; wave += threads) {
    const std::size_t width = std::min(threads, chunks - wave);
    std::vector<ChunkResult> results(width);
    if (width == 1) {
      results[0] = run_chunk(ctx, wave, n_sources);
    } else {
      std::vector<std::thread> workers;
      workers.reserve(width);
      for (std::size_t w = 0; w < width; ++w) {
        workers.emplace_back([&, w] { results[w] = run_chunk(ctx, wave + w, n_sources); });
      }
      for (auto& worker : workers) worker.join();
    }
    for (auto& result : results) {
      if (result.error) throw *result.error;
      for (std::size_t s = 0; s < n_sources; ++s) total[s].merge(result.sources[s]);
    }
  }

  EnsembleSummary summary;
  summary.n_paths = cfg.n_paths;
  summary.base_seed = cfg.base_seed;
  summary.mode = cfg.mode;
  summary.sigma = cfg.sigma;
  summary.ci_multiplier = cfg.ci_multiplier;
  summary.stderr_defined = cfg.n_paths >= 2;
  summary.times = ctx.times;
  summary.energies = ctx.energies;
  summary.prior = prior;
  summary.pairs = ctx.pairs;
  for (double block : ctx.initial_blocks) summary.coherent.push_back(block > cfg.tolerances.luders_floor);
  const auto m0 = moments(cfg.rho0, cfg.hamiltonian);
  summary.initial_energy = m0.mean;
  summary.initial_variance = m0.variance;
  summary.decoherence_efolds = cfg.decoherence_efolds;
  summary.pi_horizon_floor = cfg.pi_horizon_floor;
  summary.luders_distance_tol = cfg.luders_distance_tol;
  summary.luders_purity_tol = cfg.luders_purity_tol;
  double scale = 1.0;
  for (double e : ctx.energies) scale = std::max(scale, std::abs(e));
  summary.floor = 1e-12 * scale * scale;

  if (cfg.mode == Mode::Sde) {
    summary.sources.push_back(summarize_source(ctx, total[0], "sde", reference));
  } else {
    summary.sources.push_back(summarize_source(ctx, total[0], "closed-form", reference));
    if (cfg.mode == Mode::Both) summary.sources.push_back(summarize_source(ctx, total[1], "sde", reference));
  }

  for (const auto& name : known_checks()) {
    if (std::find(cfg.checks.begin(), cfg.checks.end(), name) != cfg.checks.end()) {
      summary.verdicts.push_back(run_check(name, summary));
    }
  }
  return summary;
}

Verdict check_born(const EnsembleSummary& s) {
  if (auto gate = require_paths("born", s)) return *gate;
  const auto& src = s.primary();
  const double n = static_cast<double>(s.n_paths);
  std::vector<CheckItem> items;
  for (std::size_t r = 0; r < s.prior.size(); ++r) {
    const double p = s.prior[r];
    const double thr = s.ci_multiplier * std::sqrt(p * (1.0 - p) / n) + s.floor;
    items.push_back(make_item("level " + level_name(r), std::abs(src.born_frequencies[r] - p), thr));
  }
  return finish("born", std::move(items));
}

Verdict check_martingales(const EnsembleSummary& s) {
  if (auto gate = require_paths("martingales", s)) return *gate;
  const auto& src = s.primary();
  const double c = s.ci_multiplier;
  const std::size_t all = s.times.size();
  std::vector<CheckItem> items;
  items.push_back(constant_series(src.find("H"), s.initial_energy, c, s.floor, all));
  for (std::size_t r = 0; r < s.prior.size(); ++r) {
    items.push_back(constant_series(src.find("pi_" + level_name(r)), s.prior[r], c, s.floor, all));
  }
  for (std::size_t p = 0; p < s.pairs.size(); ++p) {
    const auto& pair = s.pairs[p];
    const Series& pi = src.find(pair_name("Pi", pair));
    if (!s.coherent[p] || !has_values(pi)) continue;
    const double gap = s.energies[pair.first] - s.energies[pair.second];
    const double rate = s.sigma * s.sigma * gap * gap / 8.0;
    std::size_t limit = all;
    if (rate > 0.0) {
      const double horizon = -std::log(s.pi_horizon_floor) / rate;
      limit = static_cast<std::size_t>(std::upper_bound(s.times.begin(), s.times.end(), horizon) - s.times.begin());
    }
    items.push_back(constant_series(pi, 1.0, c, s.floor, limit));
  }

  // V is a supermartingale: its mean may only fall, up to noise.
  const Series& v = src.find("V");
  CheckItem worst = make_item("V nonincreasing", 0.0, s.floor);
  double worst_ratio = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 1; j < v.mean.size(); ++j) {
    const double rise = v.mean[j] - v.mean[j - 1];
    const double thr = c * (v.stderr_[j] + v.stderr_[j - 1]) + s.floor;
    const double ratio = rise / thr;
    if (ratio > worst_ratio) {
      worst_ratio = ratio;
      worst = make_item("V nonincreasing", rise, thr);
    }
  }
  items.push_back(worst);
  return finish("martingales", std::move(items));
}

Verdict check_variance_decay(const EnsembleSummary& s) {
  if (auto gate = require_paths("variance_decay", s)) return *gate;
  const auto& src = s.primary();
  const Series& v = src.find("V");
  CheckItem worst = make_item("mean V under bound", 0.0, s.floor);
  double worst_ratio = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < v.mean.size(); ++j) {
    const double excess = v.mean[j] - variance_bound(s.initial_variance, s.sigma, s.times[j]);
    const double thr = s.ci_multiplier * v.stderr_[j] + s.floor;
    if (excess / thr > worst_ratio) {
      worst_ratio = excess / thr;
      worst = make_item("mean V under bound", excess, thr);
    }
  }
  const double spread = s.energies.back() - s.energies.front();
  std::vector<CheckItem> items{worst};
  items.push_back(make_item("terminal mean V", v.mean.back(), 1e-6 * spread * spread + s.floor));
  return finish("variance_decay", std::move(items));
}

std::vector<DecoherenceFit> fit_decoherence(const EnsembleSummary& s) {
  std::vector<DecoherenceFit> fits;
  const auto& src = s.primary();
  for (std::size_t p = 0; p < s.pairs.size(); ++p) {
    const auto& pair = s.pairs[p];
    const Series& phi = src.find(pair_name("Phi", pair));
    if (!s.coherent[p] || !has_values(phi)) continue;
    const double gap = s.energies[pair.first] - s.energies[pair.second];
    const double rate = s.sigma * s.sigma * gap * gap / 8.0;
    const double window = rate > 0.0 ? s.decoherence_efolds / rate : std::numeric_limits<double>::infinity();
    double st = 0, sy = 0, stt = 0, sty = 0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < s.times.size(); ++j) {
      const double t = s.times[j];
      const double m = phi.mean[j];
      if (t > window || !(m > 0.0) || !(m > 10.0 * phi.stderr_[j])) continue;
      const double y = std::log(m);
      st += t;
      sy += y;
      stt += t * t;
      sty += t * y;
      ++n;
    }
    DecoherenceFit fit;
    fit.pair = pair;
    fit.expected = -rate;
    fit.points = n;
    const double denom = static_cast<double>(n) * stt - st * st;
    fit.slope = n >= 3 && denom > 0.0 ? (static_cast<double>(n) * sty - st * sy) / denom : kNaN;
    fits.push_back(fit);
  }
  return fits;
}

Verdict check_decoherence(const EnsembleSummary& s) {
  if (auto gate = require_paths("decoherence", s)) return *gate;
  const auto fits = fit_decoherence(s);
  if (fits.empty()) {
    Verdict v{"decoherence", true, 0.0, 0.0, "no coherent level pairs", {}};
    return v;
  }
  std::vector<CheckItem> items;
  for (const auto& fit : fits) {
    std::ostringstream label;
    label << pair_name("Phi", fit.pair) << " slope " << fit.slope << " vs " << fit.expected << " (" << fit.points
          << " points)";
    items.push_back(make_item(label.str(), std::abs(fit.slope - fit.expected),
                              0.1 * std::abs(fit.expected) + s.floor));
  }
  return finish("decoherence", std::move(items));
}

Verdict check_luders(const EnsembleSummary& s) {
  const auto& src = s.primary();
  std::vector<CheckItem> items;
  for (std::size_t r = 0; r < src.luders.size(); ++r) {
    const auto& lo = src.luders[r];
    if (lo.count == 0) continue;
    items.push_back(make_item("level " + level_name(r) + " trace distance", lo.mean_distance, s.luders_distance_tol));
    items.push_back(make_item("level " + level_name(r) + " purity", std::abs(lo.mean_purity - lo.expected_purity),
                              s.luders_purity_tol));
  }
  return finish("luders", std::move(items));
}

Verdict check_lindblad(const EnsembleSummary& s) {
  if (auto gate = require_paths("lindblad", s)) return *gate;
  const auto& src = s.primary();
  std::vector<CheckItem> items;
  constexpr double kFloor = 1e-9;
  for (const auto& sample : src.mean_states) {
    std::ostringstream label;
    label << "mean state at t = " << sample.t;
    CheckItem worst = make_item(label.str(), 0.0, kFloor);
    double worst_ratio = -1.0;
    bool all_ok = true;
    for (Eigen::Index a = 0; a < sample.mean.rows(); ++a) {
      for (Eigen::Index b = 0; b < sample.mean.cols(); ++b) {
        const Complex diff = sample.mean(a, b) - sample.reference(a, b);
        const Complex se = sample.stderr_(a, b);
        const double parts[2][2] = {{std::abs(diff.real()), se.real()}, {std::abs(diff.imag()), se.imag()}};
        for (const auto& part : parts) {
          const double thr = s.ci_multiplier * part[1] + kFloor;
          all_ok = all_ok && part[0] <= thr;
          if (part[0] / thr > worst_ratio) {
            worst_ratio = part[0] / thr;
            worst = make_item(label.str(), part[0], thr);
          }
        }
      }
    }
    worst.passed = all_ok;
    items.push_back(worst);
  }
  return finish("lindblad", std::move(items), items.empty() ? "no comparison time lies within the grid" : "");
}

Verdict check_terminal_moments(const EnsembleSummary& s) {
  if (auto gate = require_paths("terminal_moments", s)) return *gate;
  const auto& src = s.primary();
  const double c = s.ci_multiplier;
  std::vector<CheckItem> items;
  items.push_back(make_item("terminal mean energy", std::abs(src.terminal_mean - s.initial_energy),
                            c * src.terminal_mean_stderr + s.floor));
  items.push_back(make_item("terminal energy variance", std::abs(src.terminal_variance - s.initial_variance),
                            c * src.terminal_variance_stderr + s.floor));
  return finish("terminal_moments", std::move(items));
}

Verdict run_check(std::string_view name, const EnsembleSummary& summary) {
  if (name == "born") return check_born(summary);
  if (name == "martingales") return check_martingales(summary);
  if (name == "variance_decay") return check_variance_decay(summary);
  if (name == "decoherence") return check_decoherence(summary);
  if (name == "luders") return check_luders(summary);
  if (name == "lindblad") return check_lindblad(summary);
  if (name == "terminal_moments") return check_terminal_moments(summary);
  throw LabError(ErrorKind::ValidationError, "unknown check '" + std::string(name) + "'");
}

}  // namespace reduction
