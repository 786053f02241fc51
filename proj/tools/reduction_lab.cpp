#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "reduction/acceptance.hpp"
#include "reduction/commands.hpp"
#include "reduction/config.hpp"
#include "reduction/errors.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> paths;
  std::optional<std::string> out;
  std::optional<std::string> checks;
  std::optional<std::string> mode;
};

void add_run_flags(CLI::App* cmd, Overrides& o, bool ensemble) {
  cmd->add_option("--config", o.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "base seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--mode", o.mode, "sde | closed-form | both");
  if (ensemble) {
    cmd->add_option("--paths", o.paths, "number of paths");
    cmd->add_option("--checks", o.checks, "comma-separated checks to run");
  }
}

reduction::RunConfig resolve(const Overrides& o) {
  reduction::RunConfig cfg = reduction::load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.paths) cfg.n_paths = *o.paths;
  if (o.out) cfg.output_dir = *o.out;
  if (o.mode) cfg.mode = reduction::parse_mode(*o.mode);
  if (o.checks) {
    cfg.checks.clear();
    std::stringstream ss(*o.checks);
    std::string name;
    while (std::getline(ss, name, ',')) {
      if (!name.empty()) cfg.checks.push_back(name);
    }
  }
  // Re-validate with the overrides applied.
  return reduction::parse_config(reduction::serialize_config(cfg));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Energy-driven state reduction: simulation and verification"};
  app.require_subcommand(1);

  Overrides sim, ens, lin;
  auto* simulate = app.add_subcommand("simulate", "write one trajectory as CSV");
  add_run_flags(simulate, sim, false);
  auto* ensemble = app.add_subcommand("ensemble", "run a Monte Carlo ensemble and its checks");
  add_run_flags(ensemble, ens, true);
  auto* lindblad = app.add_subcommand("lindblad", "integrate the mean-state equation");
  lindblad->add_option("--config", lin.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  lindblad->add_option("--out", lin.out, "output directory");
  auto* verify = app.add_subcommand("verify", "run the acceptance suite on built-in instances");
  std::vector<int> only;
  verify->add_option("--only", only, "criterion ids to run");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate) {
      for (const auto& f : reduction::cmd_simulate(resolve(sim))) std::cout << f.string() << '\n';
      return 0;
    }
    if (*ensemble) {
      const auto cfg = resolve(ens);
      const auto result = reduction::cmd_ensemble(cfg);
      for (const auto& v : result.summary.verdicts) {
        std::cout << (v.passed ? "PASS" : "FAIL") << "  " << v.check << "  statistic " << v.statistic
                  << " threshold " << v.threshold << (v.note.empty() ? "" : "  (" + v.note + ")") << '\n';
      }
      for (const auto& f : result.files) std::cout << f.string() << '\n';
      return result.summary.all_passed() ? 0 : 1;
    }
    if (*lindblad) {
      std::cout << reduction::cmd_lindblad(resolve(lin)).string() << '\n';
      return 0;
    }
    reduction::AcceptanceOptions options;
    options.only = only;
    const auto results = reduction::run_acceptance(options);
    reduction::print_acceptance(std::cout, results);
    for (const auto& r : results) {
      if (!r.passed) return 1;
    }
    return 0;
  } catch (const reduction::LabError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
