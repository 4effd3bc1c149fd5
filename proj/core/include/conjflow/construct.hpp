// construct.hpp — the converse pipeline: prescribed conjugate data ->
// self-adjoint operator -> operator curve -> Lagrangian curve -> extension to
// the left endpoint -> symplectic system -> conformally flat metric scenario.
//
// Infinite multiplicities are capped (and flagged) at a configured cap;
// interval components of the prescribed set are represented by dense
// simple-eigenvalue sampling. Entries carry provenance so downstream reports
// can label continuum samples honestly.

#pragma once

#include <limits>
#include <memory>
#include <string>

#include "conjflow/conjugate.hpp"

namespace conjflow {

inline constexpr unsigned kInfiniteMultiplicity =
    std::numeric_limits<unsigned>::max();

struct PrescribedPoint {
  double t = 0.0;
  unsigned multiplicity = 1;  // kInfiniteMultiplicity encodes infinity
};

struct PrescribedInterval {
  double lo = 0.0;
  double hi = 0.0;
};

struct SingularityPrescription {
  double c = 0.0;
  double b = 1.0;           // right endpoint; ignored when b_infinite
  bool b_infinite = false;  // data then lives in the theta image (0, 1)
  std::vector<PrescribedPoint> points;        // K_m with multiplicities
  std::vector<PrescribedInterval> intervals;  // continuum components of K
  int budget = 64;                            // max matrix dimension
  unsigned inf_cap = 8;                       // cap for infinite multiplicity
  double density = 32.0;                      // interval samples per unit length

  // Containment in (c, upper()), interval orientation, m >= 1. Finite unions
  // are closed by construction and isolated points are exactly the point
  // entries, which all carry multiplicities, so K \ K' ⊆ K_m holds.
  void validate() const;
  double upper() const { return b_infinite ? 1.0 : b; }
};

enum class EntryProvenance { point_spectrum, continuum_sample };

struct BuiltOperator {
  SymOperator op;  // diagonal, entries ascending
  std::vector<double> diag;
  std::vector<EntryProvenance> provenance;
  bool capped_infinity = false;
};

// Diagonal operator whose eigenvalues realize the prescription: each point
// repeated min(m, cap) times, each interval sampled at `density` per unit
// length (simple eigenvalues). Empty prescriptions get one sentinel entry
// below c so the curve has no singular instants.
BuiltOperator build_operator(const SingularityPrescription& p);

// T(t) = tau(t) 1 - A with tau = id (finite b) or the horizon map
// theta(t) = (t - c) / (1 + t - c) for b = +infinity.
class OperatorCurve : public OperatorPath {
 public:
  OperatorCurve(SymOperator a, double c, bool theta_mode);

  SymOperator at(double t) const override;
  SymOperator derivative(double t) const override;

  double tau(double t) const;          // t or theta(t)
  double tau_inverse(double s) const;  // identity or theta^{-1}
  bool theta_mode() const { return theta_mode_; }
  double c() const { return c_; }
  const SymOperator& generator() const { return a_; }

 private:
  SymOperator a_;
  double c_ = 0.0;
  bool theta_mode_ = false;
};

std::shared_ptr<const OperatorCurve> prescribed_curve(
    const SingularityPrescription& p, const SymOperator& a);

// A curve of Lagrangians on [lo, hi] with a tangent operator in at(t)-frame
// coordinates. Curves built through charts override tangent() with the exact
// congruence; the default falls back to a central-difference chart derivative.
class LagrangianCurve {
 public:
  LagrangianCurve(double lo, double hi) : lo_(lo), hi_(hi) {}
  virtual ~LagrangianCurve() = default;

  virtual Lagrangian at(double t) const = 0;
  virtual SymOperator tangent(double t) const;

  double lo() const { return lo_; }
  double hi() const { return hi_; }

 protected:
  double lo_ = 0.0;
  double hi_ = 0.0;
};

// xi(t) = phi_{L0,L1}^{-1}(-T(t)) with L0 = {0} ⊕ H, L1 = H ⊕ {0}; globally
// defined because T(t) is bounded. The tangent is the exact congruence of
// -T'(t).
std::shared_ptr<const LagrangianCurve> curve_to_xi(
    std::shared_ptr<const OperatorCurve> curve, double b_eff,
    const Tolerance& tol = Tolerance{});

struct ExtensionReport {
  double chart_selfcheck = 0.0;      // ||chart(L0, L1*, xi(c)) + 1||_max
  double value_match = 0.0;          // ||sigma(c) + 1||_max (exact by design)
  double derivative_match_fd = 0.0;  // one-sided FD of sigma vs sigma'(c)
  double max_sigma_eig = 0.0;        // max over (a, c] nodes of max eig(sigma)
  double max_tau_eig = 0.0;          // max over [a, c] nodes of max eig(sigma')
  int defect_violations = 0;         // interior nodes with xi(t) not transversal to L0
};

struct XiExtension {
  std::shared_ptr<const LagrangianCurve> curve;  // on [a, hi]
  ExtensionReport report;
};

// Extension of Prop-6.7 type: glue a closed-form negative-definite operator
// path sigma on [a, c] (sigma(a) = 0, sigma(c) = -1, sigma' negative definite,
// C^1 at c) to the chart of xi_bar in the companion L1* with
// chart(L0, L1*, xi_bar(c)) = -1. All postconditions are verified on the grid.
XiExtension extend_xi(std::shared_ptr<const LagrangianCurve> xi_bar, double a,
                      double grid_h, const Tolerance& tol = Tolerance{});

struct LiftedSystem {
  SymplecticSystemSpec system;
  double lifting_drift = 0.0;  // max sin(principal angle) of psi(t)(L0) vs xi(t)
};

// Lifting: integrate psi' = X^(t) psi with X^ = -J xi'(t) P_{xi(t)}, then
// X(t) = -psi^{-1} psi'; the fundamental solution of X is psi(t)^{-1}, so the
// system's Lagrangian curve is xi. Components are tabulated on the grid.
LiftedSystem xi_to_system(std::shared_ptr<const LagrangianCurve> xi, double h,
                          const Tolerance& tol = Tolerance{});

// Conformally flat scenario on M = H ⊕ R: g = e^Omega g0 with
// Omega(x, t) = <R(t) x, x>; gamma(t) = (0, t) is a geodesic and the Jacobi
// operator along it is R(t).
class ManifoldScenario {
 public:
  ManifoldScenario(Eigen::Index n, ComponentCurve r, double a, double b_eff);

  Eigen::Index n() const { return n_; }
  double a() const { return a_; }
  double b_eff() const { return b_eff_; }
  const ComponentCurve& curvature_profile() const { return r_; }

  // point p = (x_1..x_n, t) in R^{n+1}
  double conformal_exponent(const Eigen::VectorXd& p) const;  // Omega
  Eigen::MatrixXd metric(const Eigen::VectorXd& p) const;
  // Christoffel symbols Gamma[i](j, k); exact from the conformal formula.
  std::vector<Eigen::MatrixXd> christoffel(const Eigen::VectorXd& p) const;
  // Independent route: central differences of the metric.
  std::vector<Eigen::MatrixXd> christoffel_fd(const Eigen::VectorXd& p,
                                              double fd_step = 1e-4) const;
  // Jacobi operator R(gamma', .)gamma' at (0, t) from finite-difference
  // curvature of the exact Christoffels; matches R(t) along the axis.
  Eigen::MatrixXd jacobi_operator_fd(double t, double fd_step = 1e-3) const;
  // Integrate the geodesic ODE from (0, t0) with velocity (0, 1) using
  // finite-difference Christoffels; returns the max deviation from the axis
  // point (0, t0 + s) over s in [0, span].
  double geodesic_deviation(double t0, double span, double rk_step = 1e-3,
                            double fd_step = 1e-4) const;

 private:
  Eigen::Index n_ = 0;
  ComponentCurve r_;
  double a_ = 0.0, b_eff_ = 0.0;
};

// Requires a Riemannian system (A = 0, B = 1); R(t) := C(t).
ManifoldScenario realize_metric(const SymplecticSystemSpec& xr,
                                const Tolerance& tol = Tolerance{});

struct PipelineOptions {
  double h = 1e-3;
  std::uint64_t seed = 0;
  double b_eff = std::numeric_limits<double>::quiet_NaN();  // NaN: choose
  Tolerance tol;
};

// Prescription realized as a positive symplectic system (extension + lifting,
// no Riemannian reduction); the system carries the operator curve as
// provenance. Shared by full_pipeline and the truncation-family runner.
struct PrescribedSystem {
  BuiltOperator op;
  std::shared_ptr<const OperatorCurve> curve;
  SymplecticSystemSpec system;
  ExtensionReport extension;
  double lifting_drift = 0.0;
};
PrescribedSystem prescribed_system(const SingularityPrescription& p, double a,
                                   const PipelineOptions& options = {});

struct StageMetrics {
  ExtensionReport extension;
  double lifting_drift = 0.0;
  double reduction_residual_a = 0.0;
  double reduction_residual_b = 0.0;
  double symplectic_drift = 0.0;
};

struct PipelineResult {
  BuiltOperator op;
  std::shared_ptr<const OperatorCurve> curve;
  SymplecticSystemSpec riemannian_system;
  ManifoldScenario scenario;
  ConjugateReport report;  // instants labeled with prescription provenance
  StageMetrics metrics;
};

// build_operator -> prescribed_curve -> curve_to_xi -> extend_xi ->
// xi_to_system -> riemannian_reduce -> realize_metric, then detection on the
// reduced system. Requires a < p.c.
PipelineResult full_pipeline(const SingularityPrescription& p, double a,
                             const PipelineOptions& options = {});

// Grouped eigenvalues of the built operator: the instants the detector is
// expected to report (in prescription coordinates).
struct ExpectedInstant {
  double value = 0.0;
  int multiplicity = 0;
  EntryProvenance provenance = EntryProvenance::point_spectrum;
};
std::vector<ExpectedInstant> expected_instants(const BuiltOperator& op);

struct RoundtripVerdict {
  bool match = false;
  std::string detail;
};
// Detected instants (mapped through tau) against the built operator's
// eigenvalues, with multiplicities, at absolute tolerance t_tol; also checks
// that nothing was detected at or below c.
RoundtripVerdict verify_roundtrip(const PipelineResult& result,
                                  double t_tol = 1e-6);

}  // namespace conjflow
