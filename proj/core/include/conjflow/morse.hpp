// morse.hpp — discretized index form on H^1_0, Morse index computation, and
// the image map used to verify the index theorem.
//
// Piecewise-linear elements on a uniform mesh: exact element integrals for
// the stiffness part, 2-point Gauss quadrature for the curvature part. The
// generalized problem Kmat x = lambda G x is counted (never fully solved):
// the inertia of the shifted pencil K - s G comes from a block-tridiagonal
// LDL' congruence, so index and nullity are exact integer counts in
// O(m n^3) regardless of mesh size.

#pragma once

#include "conjflow/system.hpp"

namespace conjflow {

struct IndexFormDiscretization {
  Eigen::Index n = 0;
  int m = 0;  // elements; dofs = n (m - 1)
  double a = 0.0;
  double t_end = 0.0;
  // Block-tridiagonal storage over interior nodes 1..m-1.
  std::vector<Eigen::MatrixXd> g_diag, g_off;  // H1 Gram
  std::vector<Eigen::MatrixXd> k_diag, k_off;  // index form
  std::shared_ptr<const SymplecticSystemSpec> system;

  Eigen::Index dofs() const { return n * (m - 1); }
  Eigen::MatrixXd dense_g() const;
  Eigen::MatrixXd dense_k() const;
};

// Requires a Riemannian system with a < t_end <= b_eff (R(t) = C(t)).
IndexFormDiscretization discretize(const SymplecticSystemSpec& xr, double t_end,
                                   int m);

struct FormIndex {
  int morse_index = 0;  // eigenvalues < -nullity_tol
  int nullity = 0;      // eigenvalues in [-nullity_tol, nullity_tol]
  int morse_index_perturbed = 0;  // recomputed on the m+1 mesh
  bool mesh_stable = false;       // perturbed index agrees
};

// The near-zero band nullity_tol sits above the O(m^-2) discretization error
// and below the O(1)-separated nonzero eigenvalues of the pencil.
FormIndex index_of_form(const IndexFormDiscretization& d,
                        double nullity_tol = 1e-4);

struct IndexProfilePoint {
  double t_end = 0.0;
  int index = 0;
  int nullity = 0;
};

// t |-> index_of_form at t_end = t with m = mesh_density * (t - a) elements.
std::vector<IndexProfilePoint> index_curve(const SymplecticSystemSpec& xr,
                                           double mesh_density,
                                           const std::vector<double>& t_grid,
                                           double nullity_tol = 1e-4);

// Discrete Riesz representative of the index form applied to v: solves
// G z = Kmat v on the interior dofs (block Thomas algorithm).
Eigen::VectorXd riesz_of_form(const IndexFormDiscretization& d,
                              const Eigen::VectorXd& v);

// Interior dof vector -> nodal path on the full mesh (zeros at both ends).
std::vector<Eigen::VectorXd> dof_to_path(const IndexFormDiscretization& d,
                                         const Eigen::VectorXd& v);

// P1 Phi_b ( integral_a^b Phi_t^{-1} (z'(t), 0) dt ) by trapezoidal quadrature
// on the Phi grid; z is a nodal path on the same grid with z(a) = z(b) = 0.
Eigen::VectorXd image_map(const FundamentalSolution& phi,
                          const std::vector<Eigen::VectorXd>& z_nodes);

}  // namespace conjflow
