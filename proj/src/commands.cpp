#include "reduction/commands.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>

#include <json.hpp>

#include "reduction/errors.hpp"
#include "reduction/filtering.hpp"

namespace reduction {

namespace {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LabError(ErrorKind::ValidationError, "cannot write '" + path.string() + "'");
  return out;
}

fs::path prepare_dir(const std::string& dir) {
  const fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw LabError(ErrorKind::ValidationError, "cannot create output directory '" + dir + "': " + ec.message());
  return p;
}

std::string file_tag(Mode mode) { return mode == Mode::ClosedForm ? "closed_form" : std::string(to_string(mode)); }

ordered_json matrix_json(const ComplexMatrix& m) {
  ordered_json re = ordered_json::array();
  ordered_json im = ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    ordered_json rr = ordered_json::array();
    ordered_json ii = ordered_json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      rr.push_back(m(i, j).real());
      ii.push_back(m(i, j).imag());
    }
    re.push_back(rr);
    im.push_back(ii);
  }
  return ordered_json{{"re", re}, {"im", im}};
}

std::size_t sample_signal(const RunConfig& cfg, const Model& model, RandomStream& rng) {
  auto probs = level_probabilities(model.rho0, model.spec);
  for (std::size_t r = 0; r < cfg.level_weights.size(); ++r) probs[r] *= cfg.level_weights[r];
  return sample_level(probs, rng, cfg.tolerances);
}

}  // namespace

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::vector<std::string> trajectory_header(std::size_t levels, bool with_noise) {
  std::vector<std::string> cols{"t", "H_t", "V_t", "purity"};
  if (with_noise) {
    cols.push_back("xi");
    cols.push_back("W");
  }
  for (std::size_t r = 0; r < levels; ++r) cols.push_back("pi_" + std::to_string(r + 1));
  for (const auto& [n, m] : level_pairs(levels)) {
    cols.push_back("|R_" + std::to_string(n + 1) + "_" + std::to_string(m + 1) + "|");
  }
  return cols;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj, bool with_noise) {
  const std::size_t levels = traj.level_probs.empty() ? 0 : traj.level_probs.front().size();
  const auto header = trajectory_header(levels, with_noise);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  const auto pairs = level_pairs(levels);
  std::string line;
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    line.clear();
    line += format_double(traj.grid.time(k));
    line += ',' + format_double(traj.moments[k].mean);
    line += ',' + format_double(traj.moments[k].variance);
    line += ',' + format_double(traj.purity[k]);
    if (with_noise) {
      line += ',' + format_double(traj.xi[k]);
      line += ',' + format_double(traj.w[k]);
    }
    for (double p : traj.level_probs[k]) line += ',' + format_double(p);
    for (const auto& pair : pairs) line += ',' + format_double(traj.offdiag.at(pair)[k]);
    out << line << '\n';
  }
}

void write_ensemble_csv(std::ostream& out, const EnsembleSummary& summary, const SourceSummary& source) {
  out << "t";
  for (const auto& s : source.series) out << ',' << s.name << "_mean," << s.name << "_stderr";
  out << '\n';
  for (std::size_t j = 0; j < summary.times.size(); ++j) {
    out << format_double(summary.times[j]);
    for (const auto& s : source.series) out << ',' << format_double(s.mean[j]) << ',' << format_double(s.stderr_[j]);
    out << '\n';
  }
}

std::string summary_json(const EnsembleSummary& summary, const RunConfig& cfg) {
  ordered_json root;
  root["config"] = ordered_json::parse(serialize_config(cfg, false));
  root["seed"] = summary.base_seed;
  root["n_paths"] = summary.n_paths;
  root["mode"] = std::string(to_string(summary.mode));
  root["stderr_defined"] = summary.stderr_defined;
  root["ci_multiplier"] = summary.ci_multiplier;
  root["thresholds_note"] = "confidence bands and tolerances are harness choices, not derived constants";
  root["energies"] = summary.energies;
  root["prior"] = summary.prior;
  root["initial_energy"] = summary.initial_energy;
  root["initial_variance"] = summary.initial_variance;
  root["t_max"] = summary.times.back();
  root["records"] = summary.times.size();

  ordered_json sources = ordered_json::array();
  for (const auto& src : summary.sources) {
    ordered_json s;
    s["source"] = src.source;
    s["born"] = ordered_json{{"counts", src.born_counts},
                             {"frequencies", src.born_frequencies},
                             {"expected", summary.prior}};
    s["terminal"] = ordered_json{{"mean", src.terminal_mean},
                                 {"mean_stderr", src.terminal_mean_stderr},
                                 {"variance", src.terminal_variance},
                                 {"variance_stderr", src.terminal_variance_stderr},
                                 {"expected_mean", summary.initial_energy},
                                 {"expected_variance", summary.initial_variance}};
    ordered_json luders = ordered_json::array();
    for (std::size_t r = 0; r < src.luders.size(); ++r) {
      const auto& lo = src.luders[r];
      luders.push_back(ordered_json{{"level", r + 1},
                                    {"count", lo.count},
                                    {"mean_trace_distance", lo.mean_distance},
                                    {"mean_purity", lo.mean_purity},
                                    {"expected_purity", lo.expected_purity}});
    }
    s["luders"] = luders;
    ordered_json states = ordered_json::array();
    for (const auto& ms : src.mean_states) {
      states.push_back(ordered_json{{"t", ms.t},
                                    {"mean", matrix_json(ms.mean)},
                                    {"stderr", matrix_json(ms.stderr_)},
                                    {"reference", matrix_json(ms.reference)}});
    }
    s["mean_states"] = states;
    sources.push_back(s);
  }
  root["sources"] = sources;

  ordered_json fits = ordered_json::array();
  for (const auto& fit : fit_decoherence(summary)) {
    fits.push_back(ordered_json{{"pair", {fit.pair.first + 1, fit.pair.second + 1}},
                                {"slope", fit.slope},
                                {"expected", fit.expected},
                                {"points", fit.points}});
  }
  root["decoherence_fits"] = fits;

  ordered_json verdicts = ordered_json::array();
  for (const auto& v : summary.verdicts) {
    ordered_json items = ordered_json::array();
    for (const auto& item : v.items) {
      items.push_back(ordered_json{{"label", item.label},
                                   {"measured", item.measured},
                                   {"threshold", item.threshold},
                                   {"passed", item.passed}});
    }
    verdicts.push_back(ordered_json{{"check", v.check},
                                    {"passed", v.passed},
                                    {"statistic", v.statistic},
                                    {"threshold", v.threshold},
                                    {"note", v.note},
                                    {"items", items}});
  }
  root["verdicts"] = verdicts;
  root["all_passed"] = summary.all_passed();
  return root.dump(2) + "\n";
}

SimulatedPaths simulate(const RunConfig& cfg, const Model& model) {
  SimulatedPaths out;
  RandomStream rng = RandomStream::for_path(cfg.seed, 0);
  if (cfg.mode == Mode::Sde) {
    const auto noise = NoisePath::sample(model.grid, rng);
    out.trajectories.emplace_back(Mode::Sde, simulate_sme(model.rho0, model.hamiltonian, model.spec, cfg.sigma,
                                                          cfg.hbar, model.grid, noise.increments, cfg.tolerances));
    return out;
  }
  const std::size_t level = sample_signal(cfg, model, rng);
  const auto path = make_information_path(level, model.spec, cfg.sigma, model.grid, rng, cfg.drift_scale);
  auto exact = closed_form_trajectory(path, model.rho0, model.hamiltonian, model.spec, cfg.sigma, cfg.hbar,
                                      cfg.tolerances);
  if (cfg.mode == Mode::Both) {
    std::vector<double> dw(model.grid.n_steps);
    for (std::size_t k = 0; k < dw.size(); ++k) dw[k] = exact.w[k + 1] - exact.w[k];
    auto approx = simulate_sme(model.rho0, model.hamiltonian, model.spec, cfg.sigma, cfg.hbar, model.grid, dw,
                               cfg.tolerances);
    out.trajectories.emplace_back(Mode::ClosedForm, std::move(exact));
    out.trajectories.emplace_back(Mode::Sde, std::move(approx));
    return out;
  }
  out.trajectories.emplace_back(Mode::ClosedForm, std::move(exact));
  return out;
}

std::vector<fs::path> cmd_simulate(const RunConfig& cfg) {
  const Model model = build_model(cfg);
  const auto paths = simulate(cfg, model);
  const fs::path dir = prepare_dir(cfg.output_dir);
  std::vector<fs::path> files;
  for (const auto& [mode, traj] : paths.trajectories) {
    const fs::path file = dir / ("trajectory_" + file_tag(mode) + ".csv");
    auto out = open_output(file);
    write_trajectory_csv(out, traj);
    files.push_back(file);
  }
  return files;
}

EnsembleOutput cmd_ensemble(const RunConfig& cfg) {
  const Model model = build_model(cfg);
  EnsembleOutput result{run_ensemble(ensemble_config(cfg, model)), {}};
  const fs::path dir = prepare_dir(cfg.output_dir);
  const fs::path json_file = dir / "summary.json";
  {
    auto out = open_output(json_file);
    out << summary_json(result.summary, cfg);
  }
  result.files.push_back(json_file);
  for (const auto& src : result.summary.sources) {
    const std::string tag = src.source == "closed-form" ? "closed_form" : src.source;
    const fs::path file = dir / ("ensemble_" + tag + ".csv");
    auto out = open_output(file);
    write_ensemble_csv(out, result.summary, src);
    result.files.push_back(file);
  }
  return result;
}

fs::path cmd_lindblad(const RunConfig& cfg) {
  const Model model = build_model(cfg);
  Trajectory traj;
  traj.grid = model.grid;
  traj.states = integrate_lindblad(model.rho0, model.hamiltonian, cfg.sigma, cfg.hbar, model.grid, cfg.tolerances);
  fill_observables(traj, model.hamiltonian, model.spec);
  const fs::path file = prepare_dir(cfg.output_dir) / "lindblad.csv";
  auto out = open_output(file);
  write_trajectory_csv(out, traj, false);
  return file;
}

}  // namespace reduction
