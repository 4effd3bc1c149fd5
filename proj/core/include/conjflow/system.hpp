// system.hpp — symplectic systems X(t) ∈ sp(V), fundamental solutions,
// the induced Lagrangian curve xi(t) = Phi_t^{-1}(L0), gauge isomorphisms,
// and reduction of positive systems to Riemannian form (A = 0, B = I).
//
// Components come from a closed catalog (constant, polynomial, diagonal
// profile, tabulated grid) so scenarios stay serializable and runs
// reproducible. Derivatives are exact where the catalog allows; tabulated
// entries differentiate their interpolant.

#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "conjflow/symplectic.hpp"

namespace conjflow {

class ComponentCurve {
 public:
  enum class Kind { constant, polynomial, diagonal_profile, tabulated };

  // Uninitialized placeholder; eval/derivative throw until assigned.
  ComponentCurve() = default;

  static ComponentCurve constant(Eigen::MatrixXd value);
  // sum_j t^j coeffs[j]
  static ComponentCurve polynomial(std::vector<Eigen::MatrixXd> coeffs);
  // diagonal matrix, entry k = sum_j entry_coeffs[k][j] t^j
  static ComponentCurve diagonal_profile(std::vector<std::vector<double>> entry_coeffs);
  // values on the uniform grid t0 + i h; interp_order 1 (linear) or 3 (cubic)
  static ComponentCurve tabulated(double t0, double h,
                                  std::vector<Eigen::MatrixXd> values,
                                  int interp_order = 3);

  Eigen::MatrixXd eval(double t) const;
  Eigen::MatrixXd derivative(double t) const;

  Kind kind() const { return kind_; }
  Eigen::Index rows() const;
  bool is_constant_zero() const;
  bool is_constant_identity() const;

  // Catalog payload accessors (scenario serialization).
  const Eigen::MatrixXd& constant_value() const { return coeffs_.front(); }
  const std::vector<Eigen::MatrixXd>& poly_coeffs() const { return coeffs_; }
  const std::vector<std::vector<double>>& diag_coeffs() const { return diag_; }
  double tab_t0() const { return t0_; }
  double tab_h() const { return h_; }
  int tab_order() const { return order_; }
  const std::vector<Eigen::MatrixXd>& tab_values() const { return coeffs_; }

 private:
  Kind kind_ = Kind::constant;
  std::vector<Eigen::MatrixXd> coeffs_;        // constant/polynomial/tabulated
  std::vector<std::vector<double>> diag_;      // diagonal_profile
  double t0_ = 0.0, h_ = 0.0;                  // tabulated grid
  int order_ = 3;
};

// A curve of self-adjoint operators evaluable at arbitrary t. Implemented by
// construct's prescribed curves; carried by systems built from them so
// truncation studies can probe T(t) outside the integration horizon.
class OperatorPath {
 public:
  virtual ~OperatorPath() = default;
  virtual SymOperator at(double t) const = 0;
  virtual SymOperator derivative(double t) const = 0;
};

struct SymplecticSystemSpec {
  Eigen::Index n = 0;
  double a = 0.0;
  double b_eff = 0.0;  // finite working horizon
  ComponentCurve A, B, C;
  std::shared_ptr<const OperatorPath> prescribed;  // provenance, may be null

  // X(t) = [[A, B], [C, -A']]; requires t in [a, b_eff].
  Eigen::MatrixXd assemble_at(double t) const;
};

Eigen::MatrixXd assemble(const SymplecticSystemSpec& x, double t);

// True iff B(t) is a positive isomorphism at every sampled grid node.
bool is_positive_system(const SymplecticSystemSpec& x, double h,
                        const Tolerance& tol);
// True iff A == 0 and B == I (exact for constant catalog entries, sampled
// otherwise).
bool is_riemannian_system(const SymplecticSystemSpec& x, double h,
                          double rel_tol = 1e-8);

struct IntegrateOptions {
  double drift_bound = 1e-6;  // max Frobenius norm of Phi' J Phi - J
  bool reproject = false;     // symplectic re-projection after each step
};

class FundamentalSolution {
 public:
  double a() const { return a_; }
  double h() const { return h_; }
  int steps() const { return static_cast<int>(nodes_.size()) - 1; }
  double t_end() const { return a_ + h_ * steps(); }
  const Eigen::MatrixXd& node(int i) const { return nodes_.at(static_cast<size_t>(i)); }

  // Dense output: one integrator substep from the nearest node on the left.
  Eigen::MatrixXd at(double t) const;
  // Phi^{-1} via the symplectic inverse -J Phi' J.
  Eigen::MatrixXd inverse_at(double t) const;

  double drift() const { return drift_; }
  const SymplecticSystemSpec& system() const { return *system_; }

 private:
  friend FundamentalSolution integrate(const SymplecticSystemSpec&, double,
                                       const IntegrateOptions&);
  double a_ = 0.0, h_ = 0.0;
  std::vector<Eigen::MatrixXd> nodes_;
  double drift_ = 0.0;
  std::shared_ptr<const SymplecticSystemSpec> system_;
};

// Classical one-step 4th-order integration of Phi' = X(t) Phi, Phi_a = 1,
// with fixed step h; (b_eff - a) / h must be integral. Records the
// symplecticity drift and fails when it exceeds options.drift_bound.
FundamentalSolution integrate(const SymplecticSystemSpec& x, double h,
                              const IntegrateOptions& options = {});

// xi(t) = Phi_t^{-1}(L0), orthonormalized.
Lagrangian lagrangian_curve(const FundamentalSolution& phi, double t);

// E_t = (upper-right n x n block of Phi_t) / (t - a); requires t > a.
Eigen::MatrixXd exp_differential(const FundamentalSolution& phi, double t);

// Derivative of xi at t as a self-adjoint operator in xi(t)-frame
// coordinates: central difference of the chart based at xi(t) with a
// companion common transversal (one-sided at t = a).
SymOperator xi_tangent(const FundamentalSolution& phi, double t, double dt,
                       const Tolerance& tol = Tolerance{},
                       std::uint64_t seed = 0);

// Gauge curve phi(t) = [[Z, 0], [Z^{-T} W, Z^{-T}]]: L0-preserving
// symplectomorphisms. Derivative nodes are exact when built from catalog
// components, otherwise filled by central differences on the grid.
class GaugeCurve {
 public:
  static GaugeCurve identity(Eigen::Index n, double t0, double h, int nodes);
  static GaugeCurve from_components(const ComponentCurve& z_curve,
                                    const ComponentCurve& w_curve, double t0,
                                    double h, int nodes);
  static GaugeCurve from_nodes(std::vector<Eigen::MatrixXd> z,
                               std::vector<Eigen::MatrixXd> w, double t0,
                               double h);
  static GaugeCurve from_nodes_with_derivatives(
      std::vector<Eigen::MatrixXd> z, std::vector<Eigen::MatrixXd> w,
      std::vector<Eigen::MatrixXd> zdot, std::vector<Eigen::MatrixXd> wdot,
      double t0, double h);

  double t0() const { return t0_; }
  double h() const { return h_; }
  int nodes() const { return static_cast<int>(z_.size()); }
  const Eigen::MatrixXd& z(int i) const { return z_.at(static_cast<size_t>(i)); }
  const Eigen::MatrixXd& w(int i) const { return w_.at(static_cast<size_t>(i)); }
  const Eigen::MatrixXd& zdot(int i) const { return zdot_.at(static_cast<size_t>(i)); }
  const Eigen::MatrixXd& wdot(int i) const { return wdot_.at(static_cast<size_t>(i)); }

  // Assembled symplectic gauge at node i.
  Eigen::MatrixXd phi(int i) const;
  // Validates: Z invertible, W symmetric, assembled phi symplectic (1e-8).
  void validate() const;

 private:
  double t0_ = 0.0, h_ = 0.0;
  std::vector<Eigen::MatrixXd> z_, w_, zdot_, wdot_;
};

// Components of the isomorphic system under the gauge g:
//   A~ = Z A Z^{-1} - Z B W Z^{-1} + Z' Z^{-1}
//   B~ = Z B Z'
//   C~ = Z^{-T} (W A + C - W B W + A' W + W') Z^{-1}
// Output components are tabulated on g's grid (cubic interpolation).
SymplecticSystemSpec gauge_transform(const SymplecticSystemSpec& x,
                                     const GaugeCurve& g,
                                     const Tolerance& tol = Tolerance{});

struct RiemannianReduction {
  SymplecticSystemSpec system;  // A = 0, B = I exactly; C tabulated
  GaugeCurve gauge;             // composite two-stage gauge
  double residual_a = 0.0;      // max |A~| over nodes before snapping to 0
  double residual_b = 0.0;      // max |B~ - I| over nodes before snapping to I
};

// Two-stage reduction of a positive system to Riemannian form:
// first Z = B^{-1/2}, W = 0; then W = (A + A')/2 and Z' = Z (A' - A)/2,
// Z(a) = 1. The composite gauge is returned.
RiemannianReduction riemannian_reduce(const SymplecticSystemSpec& x, double h,
                                      const Tolerance& tol = Tolerance{});

}  // namespace conjflow
