#include "reduction/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "reduction/errors.hpp"
#include "reduction/filtering.hpp"

namespace reduction {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

[[noreturn]] void schema_error(const std::string& field, const std::string& what) {
  throw LabError(ErrorKind::ParseError, "field '" + field + "': " + what);
}

[[noreturn]] void invalid(const std::string& field, const std::string& what, double value = 0.0) {
  throw LabError(ErrorKind::ValidationError, field + " " + what, value);
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Object view that rejects keys nobody asked for.
class Fields {
 public:
  Fields(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) schema_error(path_.empty() ? "<root>" : path_, "expected an object");
  }

  const json* get(const std::string& key) {
    seen_.insert(key);
    const auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  const json& require(const std::string& key) {
    const json* v = get(key);
    if (!v) schema_error(join(path_, key), "required");
    return *v;
  }

  std::string field(const std::string& key) const { return join(path_, key); }

  void finish() const {
    for (const auto& item : node_.items()) {
      if (!seen_.count(item.key())) schema_error(join(path_, item.key()), "unknown key");
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

double as_number(const json& v, const std::string& field) {
  if (!v.is_number()) schema_error(field, "expected a number");
  return v.get<double>();
}

std::uint64_t as_unsigned(const json& v, const std::string& field) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) schema_error(field, "expected a nonnegative integer");
  schema_error(field, "expected an integer");
}

std::string as_string(const json& v, const std::string& field) {
  if (!v.is_string()) schema_error(field, "expected a string");
  return v.get<std::string>();
}

std::vector<double> as_numbers(const json& v, const std::string& field) {
  if (!v.is_array()) schema_error(field, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_number(v[i], field + "[" + std::to_string(i) + "]"));
  return out;
}

Eigen::MatrixXd as_real_matrix(const json& v, const std::string& field) {
  if (!v.is_array() || v.empty()) schema_error(field, "expected a nonempty array of rows");
  const std::size_t rows = v.size();
  std::size_t cols = 0;
  Eigen::MatrixXd out;
  for (std::size_t i = 0; i < rows; ++i) {
    const auto row = as_numbers(v[i], field + "[" + std::to_string(i) + "]");
    if (i == 0) {
      cols = row.size();
      if (cols == 0) schema_error(field, "rows must not be empty");
      out.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    } else if (row.size() != cols) {
      schema_error(field, "rows have different lengths");
    }
    for (std::size_t j = 0; j < cols; ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
  }
  return out;
}

ComplexMatrix as_complex_matrix(const json& v, const std::string& path) {
  Fields f(v, path);
  const Eigen::MatrixXd re = as_real_matrix(f.require("re"), f.field("re"));
  Eigen::MatrixXd im = Eigen::MatrixXd::Zero(re.rows(), re.cols());
  if (const json* node = f.get("im")) {
    im = as_real_matrix(*node, f.field("im"));
    if (im.rows() != re.rows() || im.cols() != re.cols()) schema_error(f.field("im"), "shape differs from re");
  }
  f.finish();
  ComplexMatrix out(re.rows(), re.cols());
  out.real() = re;
  out.imag() = im;
  return out;
}

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

std::size_t line_of(std::string_view text, std::size_t byte) {
  const std::size_t end = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(end), '\n'));
}

void read_tolerances(const json& node, ToleranceSet& t) {
  Fields f(node, "tolerances");
  const std::pair<const char*, double*> entries[] = {
      {"hermiticity", &t.hermiticity},   {"trace", &t.trace},           {"psd", &t.psd},
      {"matrix", &t.matrix},             {"reconstruction", &t.reconstruction},
      {"degeneracy", &t.degeneracy},     {"luders_floor", &t.luders_floor}, {"clamp", &t.clamp}};
  for (const auto& [key, slot] : entries) {
    if (const json* v = f.get(key)) {
      *slot = as_number(*v, f.field(key));
      if (!(*slot > 0.0) || !std::isfinite(*slot)) invalid(f.field(key), "must be positive and finite", *slot);
    }
  }
  f.finish();
}

void read_hamiltonian(const json& node, RunConfig& cfg) {
  Fields f(node, "hamiltonian");
  if (node.contains("eigenvalues")) {
    cfg.eigenvalues = as_numbers(f.require("eigenvalues"), f.field("eigenvalues"));
    if (cfg.eigenvalues.empty()) schema_error(f.field("eigenvalues"), "must not be empty");
    if (const json* b = f.get("basis")) cfg.basis = as_complex_matrix(*b, f.field("basis"));
  } else if (node.contains("re")) {
    cfg.hamiltonian_matrix = as_complex_matrix(node, "hamiltonian");
    return;
  } else {
    schema_error("hamiltonian", "expected either eigenvalues or re/im");
  }
  f.finish();
}

}  // namespace

ComplexMatrix RunConfig::hamiltonian() const {
  if (hamiltonian_matrix) return *hamiltonian_matrix;
  const Eigen::Index n = static_cast<Eigen::Index>(eigenvalues.size());
  ComplexVector d(n);
  for (Eigen::Index i = 0; i < n; ++i) d(i) = eigenvalues[static_cast<std::size_t>(i)];
  if (!basis) return d.asDiagonal();
  return *basis * d.asDiagonal() * basis->adjoint();
}

RunConfig parse_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    std::ostringstream os;
    os << "line " << line_of(text, e.byte) << ": " << e.what();
    throw LabError(ErrorKind::ParseError, os.str());
  }

  RunConfig cfg;
  Fields f(root, "");
  read_hamiltonian(f.require("hamiltonian"), cfg);
  cfg.rho0 = as_complex_matrix(f.require("rho0"), "rho0");
  if (const json* v = f.get("sigma")) cfg.sigma = as_number(*v, "sigma");
  if (const json* v = f.get("hbar")) cfg.hbar = as_number(*v, "hbar");
  if (const json* v = f.get("grid")) {
    Fields g(*v, "grid");
    if (const json* t = g.get("t_max")) cfg.t_max = as_number(*t, "grid.t_max");
    if (const json* d = g.get("dt")) cfg.dt = as_number(*d, "grid.dt");
    g.finish();
  }
  if (const json* v = f.get("record_every")) cfg.record_every = as_unsigned(*v, "record_every");
  if (const json* v = f.get("n_paths")) cfg.n_paths = as_unsigned(*v, "n_paths");
  if (const json* v = f.get("seed")) cfg.seed = as_unsigned(*v, "seed");
  if (const json* v = f.get("mode")) cfg.mode = parse_mode(as_string(*v, "mode"));
  if (const json* v = f.get("output_dir")) cfg.output_dir = as_string(*v, "output_dir");
  if (const json* v = f.get("checks")) {
    if (!v->is_array()) schema_error("checks", "expected an array of names");
    cfg.checks.clear();
    for (std::size_t i = 0; i < v->size(); ++i) cfg.checks.push_back(as_string((*v)[i], "checks[" + std::to_string(i) + "]"));
  }
  if (const json* v = f.get("ci_multiplier")) cfg.ci_multiplier = as_number(*v, "ci_multiplier");
  if (const json* v = f.get("threads")) cfg.threads = as_unsigned(*v, "threads");
  if (const json* v = f.get("tolerances")) read_tolerances(*v, cfg.tolerances);
  if (const json* v = f.get("lindblad_times")) cfg.lindblad_times = as_numbers(*v, "lindblad_times");
  if (const json* v = f.get("decoherence_efolds")) cfg.decoherence_efolds = as_number(*v, "decoherence_efolds");
  if (const json* v = f.get("fixtures")) {
    Fields x(*v, "fixtures");
    if (const json* d = x.get("drift_scale")) cfg.drift_scale = as_number(*d, "fixtures.drift_scale");
    if (const json* w = x.get("level_weights")) cfg.level_weights = as_numbers(*w, "fixtures.level_weights");
    x.finish();
  }
  f.finish();

  if (!(cfg.sigma >= 0.0) || !std::isfinite(cfg.sigma)) invalid("sigma", "must be nonnegative and finite", cfg.sigma);
  if (!(cfg.hbar > 0.0) || !std::isfinite(cfg.hbar)) invalid("hbar", "must be positive and finite", cfg.hbar);
  if (!(cfg.dt > 0.0) || !std::isfinite(cfg.dt)) invalid("grid.dt", "must be positive and finite", cfg.dt);
  if (cfg.t_max && (!(*cfg.t_max > 0.0) || !std::isfinite(*cfg.t_max))) {
    invalid("grid.t_max", "must be positive and finite", *cfg.t_max);
  }
  if (cfg.n_paths == 0) invalid("n_paths", "must be at least 1");
  if (!(cfg.ci_multiplier > 0.0)) invalid("ci_multiplier", "must be positive", cfg.ci_multiplier);
  if (!(cfg.decoherence_efolds > 0.0)) invalid("decoherence_efolds", "must be positive", cfg.decoherence_efolds);
  if (!std::isfinite(cfg.drift_scale)) invalid("fixtures.drift_scale", "must be finite");
  for (double w : cfg.level_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) invalid("fixtures.level_weights", "must be nonnegative", w);
  }
  for (double t : cfg.lindblad_times) {
    if (!(t >= 0.0) || !std::isfinite(t)) invalid("lindblad_times", "must be nonnegative", t);
  }
  for (const auto& name : cfg.checks) {
    if (std::find(known_checks().begin(), known_checks().end(), name) == known_checks().end()) {
      invalid("checks", "contains unknown check '" + name + "'");
    }
  }
  build_model(cfg);
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LabError(ErrorKind::ParseError, "cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const RunConfig& cfg, bool include_threads) {
  ordered_json root;
  if (cfg.hamiltonian_matrix) {
    root["hamiltonian"] = matrix_json(*cfg.hamiltonian_matrix);
  } else {
    ordered_json h;
    h["eigenvalues"] = cfg.eigenvalues;
    if (cfg.basis) h["basis"] = matrix_json(*cfg.basis);
    root["hamiltonian"] = h;
  }
  root["rho0"] = matrix_json(cfg.rho0);
  root["sigma"] = cfg.sigma;
  root["hbar"] = cfg.hbar;
  ordered_json grid;
  if (cfg.t_max) grid["t_max"] = *cfg.t_max;
  grid["dt"] = cfg.dt;
  root["grid"] = grid;
  root["record_every"] = cfg.record_every;
  root["n_paths"] = cfg.n_paths;
  root["seed"] = cfg.seed;
  root["mode"] = std::string(to_string(cfg.mode));
  root["output_dir"] = cfg.output_dir;
  root["checks"] = cfg.checks;
  root["ci_multiplier"] = cfg.ci_multiplier;
  if (include_threads) root["threads"] = cfg.threads;
  const ToleranceSet& t = cfg.tolerances;
  root["tolerances"] = ordered_json{{"hermiticity", t.hermiticity},
                                    {"trace", t.trace},
                                    {"psd", t.psd},
                                    {"matrix", t.matrix},
                                    {"reconstruction", t.reconstruction},
                                    {"degeneracy", t.degeneracy},
                                    {"luders_floor", t.luders_floor},
                                    {"clamp", t.clamp}};
  root["lindblad_times"] = cfg.lindblad_times;
  root["decoherence_efolds"] = cfg.decoherence_efolds;
  if (cfg.drift_scale != 1.0 || !cfg.level_weights.empty()) {
    ordered_json fx;
    fx["drift_scale"] = cfg.drift_scale;
    fx["level_weights"] = cfg.level_weights;
    root["fixtures"] = fx;
  }
  return root.dump(2) + "\n";
}

Model build_model(const RunConfig& cfg) {
  if (cfg.basis) {
    const ComplexMatrix& u = *cfg.basis;
    const auto n = static_cast<Eigen::Index>(cfg.eigenvalues.size());
    if (u.rows() != n || u.cols() != n) {
      throw LabError(ErrorKind::DimensionMismatch, "hamiltonian.basis must be square with one column per eigenvalue");
    }
    const double defect = (u.adjoint() * u - ComplexMatrix::Identity(n, n)).cwiseAbs().maxCoeff();
    if (defect > cfg.tolerances.matrix) invalid("hamiltonian.basis", "is not unitary", defect);
  }
  HermitianOperator h(cfg.hamiltonian(), cfg.tolerances);
  if (cfg.rho0.rows() != h.dim() || cfg.rho0.cols() != h.dim()) {
    std::ostringstream os;
    os << "rho0 is " << cfg.rho0.rows() << "x" << cfg.rho0.cols() << " but the hamiltonian is " << h.dim() << "x"
       << h.dim();
    throw LabError(ErrorKind::DimensionMismatch, os.str());
  }
  DensityMatrix rho0 = validate_density(cfg.rho0, cfg.tolerances);
  SpectralDecomposition spec = spectral_decompose(h, std::nullopt, cfg.tolerances);
  if (!cfg.level_weights.empty() && cfg.level_weights.size() != spec.size()) {
    std::ostringstream os;
    os << "needs one weight per distinct energy level (" << spec.size() << ")";
    invalid("fixtures.level_weights", os.str());
  }

  double t_max = 0.0;
  if (cfg.t_max) {
    t_max = *cfg.t_max;
  } else {
    const double horizon = default_horizon(spec, moments(rho0, h).variance, cfg.sigma);
    t_max = std::ceil(horizon / cfg.dt - 1e-9) * cfg.dt;
  }
  const TimeGrid grid = TimeGrid::make(t_max, cfg.dt);
  return Model{std::move(h), std::move(rho0), std::move(spec), grid};
}

EnsembleConfig ensemble_config(const RunConfig& cfg, const Model& model) {
  EnsembleConfig out(model.hamiltonian, model.rho0, model.grid);
  out.sigma = cfg.sigma;
  out.hbar = cfg.hbar;
  out.n_paths = cfg.n_paths;
  out.base_seed = cfg.seed;
  out.mode = cfg.mode;
  out.checks = cfg.checks;
  out.ci_multiplier = cfg.ci_multiplier;
  out.record_every = cfg.record_every;
  out.threads = cfg.threads;
  out.tolerances = cfg.tolerances;
  out.lindblad_times = cfg.lindblad_times;
  out.decoherence_efolds = cfg.decoherence_efolds;
  out.drift_scale = cfg.drift_scale;
  out.level_weights = cfg.level_weights;
  return out;
}

}  // namespace reduction
