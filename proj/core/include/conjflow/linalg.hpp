// linalg.hpp — dense self-adjoint spectral kernel.
//
// SymOperator is a dense real symmetric matrix standing for a self-adjoint
// operator on a truncated Hilbert space H ≅ R^n. All spectra go through a
// symmetric eigensolver on the explicitly symmetrized matrix. The two-tier
// Tolerance (kernel_tol < gap_tol) separates "kernel direction" from
// "invertible"; eigenvalues landing strictly between the two tiers are a dead
// zone that fails loudly instead of being misclassified.

#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "conjflow/errors.hpp"

namespace conjflow {

struct Tolerance {
  double kernel_tol = 1e-9;  // |eigenvalue| at or below: kernel direction
  double gap_tol = 1e-6;     // eigenvalue gap at or above: invertible

  void validate() const {
    if (!(kernel_tol >= 0.0) || !(gap_tol >= 0.0) || !(kernel_tol < gap_tol))
      throw PreconditionError("Tolerance: requires 0 <= kernel_tol < gap_tol");
  }
};

class SymOperator {
 public:
  // Accepts matrices with symmetry drift up to 1e-12 * (1 + max|entry|);
  // the drift is repaired by symmetrization. Larger drift is an error.
  explicit SymOperator(Eigen::MatrixXd entries);

  static SymOperator Identity(Eigen::Index dim);
  static SymOperator Zero(Eigen::Index dim);
  static SymOperator Diagonal(const std::vector<double>& diag);

  Eigen::Index dim() const { return mat_.rows(); }
  const Eigen::MatrixXd& matrix() const { return mat_; }

  SymOperator operator+(const SymOperator& other) const;
  SymOperator operator-(const SymOperator& other) const;
  SymOperator scaled(double s) const;

 private:
  Eigen::MatrixXd mat_;
};

// Eigenvalues of the symmetrized matrix, ascending, with multiplicity.
std::vector<double> spectrum(const SymOperator& s);

// Eigen decomposition (ascending); shared by the counting helpers below.
struct EigenSystem {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;  // columns
};
EigenSystem eigen_system(const SymOperator& s);

// Count of eigenvalues < -tol.kernel_tol.
int morse_index(const SymOperator& s, const Tolerance& tol);

// Count of eigenvalues with |lambda| <= tol.kernel_tol.
int kernel_dim(const SymOperator& s, const Tolerance& tol);

// True iff the smallest eigenvalue is >= tol.gap_tol.
bool is_positive_isomorphism(const SymOperator& s, const Tolerance& tol);

// Symmetric positive-definite R with R*S*R = I. Requires
// is_positive_isomorphism(s, tol).
SymOperator sym_inv_sqrt(const SymOperator& s, const Tolerance& tol);

// For every lambda in spectrum(T), a witness mu in spectrum(T+H) with
// lambda + min_eig(H) <= mu <= lambda + max_eig(H) (1e-9 slack on the
// endpoints). Witness absence is returned as data, not an error: the property
// suite asserts the counterexample list stays empty.
struct ShiftWitness {
  double lambda;
  double mu;
};
struct ShiftWitnessReport {
  std::vector<ShiftWitness> pairs;
  std::vector<double> counterexamples;  // lambdas with no witness
  double alpha = 0.0;                   // min eig of H
  double beta = 0.0;                    // max eig of H
};
ShiftWitnessReport spectral_shift_witness(const SymOperator& t,
                                          const SymOperator& h);

// Orthogonal decomposition H = H+ ⊕ N ⊕ H- by spectral projectors.
// Eigenvalues in the open dead zone (kernel_tol, gap_tol) raise
// AmbiguousSplitError listing the offenders.
struct SpectralSplit {
  SymOperator p_pos;
  SymOperator p_ker;
  SymOperator p_neg;
};
SpectralSplit spectral_split(const SymOperator& s, const Tolerance& tol);

}  // namespace conjflow
