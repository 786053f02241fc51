#include "reduction/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "reduction/errors.hpp"

namespace reduction {

namespace {

void require_square(const ComplexMatrix& m, const char* what) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    std::ostringstream os;
    os << what << " must be a non-empty square matrix, got " << m.rows() << "x" << m.cols();
    throw LabError(ErrorKind::DimensionMismatch, os.str());
  }
}

void require_finite(const ComplexMatrix& m, const char* what) {
  if (!m.allFinite()) {
    throw LabError(ErrorKind::NonFiniteInput, std::string(what) + " has non-finite entries");
  }
}

void require_same_dim(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    std::ostringstream os;
    os << what << ": dimension " << a << " vs " << b;
    throw LabError(ErrorKind::DimensionMismatch, os.str());
  }
}

double min_eigenvalue(const ComplexMatrix& m) {
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> solver(m, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    throw LabError(ErrorKind::EigenSolverFailure, "eigenvalue computation did not converge");
  }
  return solver.eigenvalues().minCoeff();
}

}  // namespace

double hermiticity_defect(const ComplexMatrix& m) {
  return (m - m.adjoint()).cwiseAbs().maxCoeff();
}

ComplexMatrix hermitize(const ComplexMatrix& m) {
  return 0.5 * (m + m.adjoint());
}

HermitianOperator::HermitianOperator(const ComplexMatrix& m, const ToleranceSet& tols) {
  require_square(m, "operator");
  require_finite(m, "operator");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  const double defect = hermiticity_defect(m);
  if (defect > tols.hermiticity * scale) {
    std::ostringstream os;
    os << "max |A - A^dagger| = " << defect << " exceeds " << tols.hermiticity * scale;
    throw LabError(ErrorKind::NotHermitian, os.str(), defect);
  }
  matrix_ = hermitize(m);
}

HermitianOperator HermitianOperator::diagonal(const std::vector<double>& values) {
  ComplexMatrix m = ComplexMatrix::Zero(static_cast<Eigen::Index>(values.size()),
                                        static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = values[i];
  }
  return HermitianOperator(m);
}

double DensityMatrix::purity() const {
  // tr(rho^2) = sum |rho_ij|^2 for Hermitian rho
  return matrix_.squaredNorm();
}

DensityMatrix DensityMatrix::pure(const ComplexVector& psi) {
  const double norm = psi.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw LabError(ErrorKind::ValidationError, "state vector must be nonzero and finite");
  }
  const ComplexVector unit = psi / norm;
  return validate_density(unit * unit.adjoint());
}

DensityMatrix DensityMatrix::maximally_mixed(Eigen::Index n) {
  return validate_density(ComplexMatrix::Identity(n, n) / static_cast<double>(n));
}

DensityMatrix validate_density(const ComplexMatrix& m, const ToleranceSet& tols) {
  require_square(m, "density matrix");
  require_finite(m, "density matrix");

  const double defect = hermiticity_defect(m);
  if (defect > tols.hermiticity) {
    std::ostringstream os;
    os << "max |rho - rho^dagger| = " << defect << " exceeds " << tols.hermiticity;
    throw LabError(ErrorKind::NotHermitian, os.str(), defect);
  }
  ComplexMatrix h = hermitize(m);

  const double trace = h.trace().real();
  if (std::abs(trace - 1.0) > tols.trace) {
    std::ostringstream os;
    os << "trace " << trace << " differs from 1 by " << std::abs(trace - 1.0);
    throw LabError(ErrorKind::NotTraceOne, os.str(), trace - 1.0);
  }
  h /= trace;

  const double lowest = min_eigenvalue(h);
  if (lowest < -tols.psd) {
    std::ostringstream os;
    os << "smallest eigenvalue " << lowest << " below -" << tols.psd;
    throw LabError(ErrorKind::NotPositive, os.str(), lowest);
  }
  return DensityMatrix(std::move(h));
}

DensityMatrix repair_density(const ComplexMatrix& m, const ToleranceSet& tols) {
  if (!m.allFinite()) {
    throw LabError(ErrorKind::StepDivergence, "state has non-finite entries");
  }
  ComplexMatrix h = hermitize(m);
  const double trace = h.trace().real();
  if (!(trace > 0.0)) {
    throw LabError(ErrorKind::StepDivergence, "state trace collapsed to " + std::to_string(trace), trace);
  }
  h /= trace;

  // Fast path: rho + psd*I admits a Cholesky factor iff no eigenvalue is
  // below -psd (up to round-off).
  const Eigen::Index n = h.rows();
  Eigen::LLT<ComplexMatrix> llt(h + tols.psd * ComplexMatrix::Identity(n, n));
  if (llt.info() == Eigen::Success) {
    return DensityMatrix(std::move(h));
  }

  Eigen::SelfAdjointEigenSolver<ComplexMatrix> solver(h);
  if (solver.info() != Eigen::Success) {
    throw LabError(ErrorKind::StepDivergence, "eigen-solver failed during positivity repair");
  }
  const double lowest = solver.eigenvalues().minCoeff();
  if (lowest >= -tols.psd) {
    return DensityMatrix(std::move(h));
  }
  if (lowest < -tols.clamp) {
    std::ostringstream os;
    os << "smallest eigenvalue " << lowest << " below clamp threshold -" << tols.clamp;
    throw LabError(ErrorKind::StepDivergence, os.str(), lowest);
  }
  const Eigen::VectorXd clamped = solver.eigenvalues().cwiseMax(0.0);
  ComplexMatrix rebuilt = solver.eigenvectors() * clamped.cast<Complex>().asDiagonal() *
                          solver.eigenvectors().adjoint();
  rebuilt = hermitize(rebuilt);
  rebuilt /= rebuilt.trace().real();
  return DensityMatrix(std::move(rebuilt));
}

std::vector<double> SpectralDecomposition::energies() const {
  std::vector<double> out;
  out.reserve(levels.size());
  for (const auto& level : levels) out.push_back(level.energy);
  return out;
}

double SpectralDecomposition::min_gap() const {
  double gap = 0.0;
  for (std::size_t r = 1; r < levels.size(); ++r) {
    const double d = levels[r].energy - levels[r - 1].energy;
    gap = (r == 1) ? d : std::min(gap, d);
  }
  return gap;
}

double SpectralDecomposition::spread() const {
  return levels.empty() ? 0.0 : levels.back().energy - levels.front().energy;
}

SpectralDecomposition spectral_decompose(const HermitianOperator& h, std::optional<double> degeneracy_tol,
                                         const ToleranceSet& tols) {
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> solver(h.matrix());
  if (solver.info() != Eigen::Success) {
    throw LabError(ErrorKind::EigenSolverFailure, "Hermitian eigen-solver did not converge");
  }
  const Eigen::VectorXd& values = solver.eigenvalues();  // ascending
  const ComplexMatrix& vectors = solver.eigenvectors();
  const Eigen::Index n = values.size();

  const double emax = values.cwiseAbs().maxCoeff();
  const double merge = degeneracy_tol.value_or(tols.degeneracy * std::max(1.0, emax));

  SpectralDecomposition out;
  out.eigenvectors = vectors;
  out.level_of.resize(static_cast<std::size_t>(n));

  Eigen::Index start = 0;
  while (start < n) {
    Eigen::Index stop = start + 1;
    while (stop < n && values(stop) - values(stop - 1) <= merge) ++stop;
    const Eigen::Index count = stop - start;
    const auto block = vectors.middleCols(start, count);
    EnergyLevel level{values.segment(start, count).mean(), block * block.adjoint(),
                      static_cast<int>(count)};
    for (Eigen::Index i = start; i < stop; ++i) {
      out.level_of[static_cast<std::size_t>(i)] = out.levels.size();
    }
    out.levels.push_back(std::move(level));
    start = stop;
  }

  ComplexMatrix rebuilt = ComplexMatrix::Zero(n, n);
  for (const auto& level : out.levels) rebuilt += level.energy * level.projector;
  const double residual = (rebuilt - h.matrix()).cwiseAbs().maxCoeff();
  if (residual > tols.reconstruction * std::max(1.0, emax) + merge) {
    std::ostringstream os;
    os << "spectral reconstruction residual " << residual;
    throw LabError(ErrorKind::EigenSolverFailure, os.str(), residual);
  }
  return out;
}

std::vector<double> level_probabilities(const DensityMatrix& rho, const SpectralDecomposition& spec) {
  require_same_dim(rho.dim(), spec.dim(), "level_probabilities");
  std::vector<double> p;
  p.reserve(spec.size());
  for (const auto& level : spec.levels) {
    p.push_back(std::max(0.0, (rho.matrix() * level.projector).trace().real()));
  }
  return p;
}

DensityMatrix luders_state(const DensityMatrix& rho0, const SpectralDecomposition& spec, std::size_t level,
                           const ToleranceSet& tols) {
  require_same_dim(rho0.dim(), spec.dim(), "luders_state");
  if (level >= spec.size()) {
    throw LabError(ErrorKind::ValidationError, "level index " + std::to_string(level) + " out of range");
  }
  const ComplexMatrix& p = spec.levels[level].projector;
  const ComplexMatrix block = p * rho0.matrix() * p;
  const double weight = block.trace().real();
  if (!(weight > tols.luders_floor)) {
    std::ostringstream os;
    os << "tr(rho0 P_" << level << ") = " << weight << " is below the floor " << tols.luders_floor;
    throw LabError(ErrorKind::ZeroProbabilitySubspace, os.str(), weight);
  }
  return validate_density(block / weight, tols);
}

StateMoments moments(const DensityMatrix& rho, const HermitianOperator& h) {
  require_same_dim(rho.dim(), h.dim(), "moments");
  const ComplexMatrix& r = rho.matrix();
  const double mean = (r * h.matrix()).trace().real();
  const Eigen::Index n = h.dim();
  const ComplexMatrix centered = h.matrix() - mean * ComplexMatrix::Identity(n, n);
  const ComplexMatrix rc = r * centered;
  const ComplexMatrix rc2 = rc * centered;
  return {mean, rc2.trace().real(), (rc2 * centered).trace().real()};
}

std::map<LevelPair, double> offdiag_norms(const DensityMatrix& rho, const SpectralDecomposition& spec) {
  require_same_dim(rho.dim(), spec.dim(), "offdiag_norms");
  std::map<LevelPair, double> out;
  for (std::size_t n = 0; n < spec.size(); ++n) {
    const ComplexMatrix left = spec.levels[n].projector * rho.matrix();
    for (std::size_t m = 0; m < spec.size(); ++m) {
      if (n == m) continue;
      out[{n, m}] = (left * spec.levels[m].projector).norm();
    }
  }
  return out;
}

std::vector<LevelPair> level_pairs(std::size_t levels) {
  std::vector<LevelPair> pairs;
  for (std::size_t n = 0; n < levels; ++n) {
    for (std::size_t m = n + 1; m < levels; ++m) pairs.emplace_back(n, m);
  }
  return pairs;
}

double trace_distance(const ComplexMatrix& a, const ComplexMatrix& b) {
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> solver(hermitize(a - b), Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    throw LabError(ErrorKind::EigenSolverFailure, "trace distance eigen-solve failed");
  }
  return 0.5 * solver.eigenvalues().cwiseAbs().sum();
}

}  // namespace reduction
