#pragma once

#include <complex>
#include <cstddef>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "reduction/tolerances.hpp"

namespace reduction {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

// Largest entrywise |A - A^dagger|.
double hermiticity_defect(const ComplexMatrix& m);

// (A + A^dagger) / 2
ComplexMatrix hermitize(const ComplexMatrix& m);

/// Hermitian operator (Hamiltonian or observable). Construction validates
/// hermiticity and stores the symmetrized matrix, so downstream code always
/// sees exactly Hermitian data.
class HermitianOperator {
 public:
  /// Throws LabError(NotHermitian) when the defect exceeds the tolerance
  /// scaled by max(1, max |A_ij|), or NonFiniteInput / DimensionMismatch.
  explicit HermitianOperator(const ComplexMatrix& m, const ToleranceSet& tols = {});

  static HermitianOperator diagonal(const std::vector<double>& values);

  const ComplexMatrix& matrix() const noexcept { return matrix_; }
  Eigen::Index dim() const noexcept { return matrix_.rows(); }

 private:
  ComplexMatrix matrix_;
};

/// Trace-one positive-semidefinite Hermitian matrix.
class DensityMatrix {
 public:
  const ComplexMatrix& matrix() const noexcept { return matrix_; }
  Eigen::Index dim() const noexcept { return matrix_.rows(); }

  double purity() const;

  static DensityMatrix pure(const ComplexVector& psi);
  static DensityMatrix maximally_mixed(Eigen::Index n);

 private:
  friend DensityMatrix validate_density(const ComplexMatrix&, const ToleranceSet&);
  friend DensityMatrix repair_density(const ComplexMatrix&, const ToleranceSet&);
  explicit DensityMatrix(ComplexMatrix m) : matrix_(std::move(m)) {}

  ComplexMatrix matrix_;
};

/// Validates hermiticity, unit trace and positivity. Within tolerance the
/// matrix is hermitized and its trace renormalized to exactly one.
DensityMatrix validate_density(const ComplexMatrix& m, const ToleranceSet& tols = {});

/// Post-step repair used by the integrators: hermitize, renormalize the
/// trace, and clamp eigenvalues that fall below -tols.psd but not below
/// -tols.clamp. Throws StepDivergence for anything worse.
DensityMatrix repair_density(const ComplexMatrix& m, const ToleranceSet& tols = {});

struct EnergyLevel {
  double energy;
  ComplexMatrix projector;
  int multiplicity;
};

struct SpectralDecomposition {
  // Strictly increasing energies.
  std::vector<EnergyLevel> levels;
  // Orthonormal eigenvectors, columns grouped by level in level order.
  ComplexMatrix eigenvectors;
  // level_of[i] is the level owning eigenvector column i.
  std::vector<std::size_t> level_of;

  std::size_t size() const noexcept { return levels.size(); }
  Eigen::Index dim() const noexcept { return eigenvectors.rows(); }
  std::vector<double> energies() const;
  double min_gap() const;
  double spread() const;
};

/// Eigen-decomposes `h` and merges eigenvalues closer than the degeneracy
/// threshold by single linkage on the sorted spectrum; a merged level takes
/// the mean of its eigenvalues. When `degeneracy_tol` is empty it defaults
/// to tols.degeneracy * max(1, max |E|).
SpectralDecomposition spectral_decompose(const HermitianOperator& h,
                                         std::optional<double> degeneracy_tol = std::nullopt,
                                         const ToleranceSet& tols = {});

/// p_r = tr(rho P_r), negative round-off clamped to zero.
std::vector<double> level_probabilities(const DensityMatrix& rho, const SpectralDecomposition& spec);

/// P_r rho0 P_r / tr(rho0 P_r).
DensityMatrix luders_state(const DensityMatrix& rho0, const SpectralDecomposition& spec,
                           std::size_t level, const ToleranceSet& tols = {});

struct StateMoments {
  double mean;      // H = tr(rho H)
  double variance;  // V = tr(rho (H - H)^2)
  double skewness;  // beta = tr(rho (H - H)^3)
};

StateMoments moments(const DensityMatrix& rho, const HermitianOperator& h);

using LevelPair = std::pair<std::size_t, std::size_t>;

/// |P_n rho P_m| = (tr R R^dagger)^(1/2) for every ordered pair n != m.
std::map<LevelPair, double> offdiag_norms(const DensityMatrix& rho, const SpectralDecomposition& spec);

/// Unordered level pairs (n < m) in lexicographic order.
std::vector<LevelPair> level_pairs(std::size_t levels);

double trace_distance(const ComplexMatrix& a, const ComplexMatrix& b);

}  // namespace reduction
