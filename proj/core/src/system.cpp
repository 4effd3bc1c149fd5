#include "conjflow/system.hpp"

#include <cmath>
#include <sstream>

namespace conjflow {

namespace {

Eigen::MatrixXd apply_j(const Eigen::MatrixXd& m) {
  const Eigen::Index n = m.rows() / 2;
  Eigen::MatrixXd out(m.rows(), m.cols());
  out.topRows(n) = -m.bottomRows(n);
  out.bottomRows(n) = m.topRows(n);
  return out;
}

int locate_cell(double t, double t0, double h, int cells) {
  int i = static_cast<int>(std::floor((t - t0) / h));
  if (i < 0) i = 0;
  if (i > cells - 1) i = cells - 1;
  return i;
}

}  // namespace

ComponentCurve ComponentCurve::constant(Eigen::MatrixXd value) {
  ComponentCurve c;
  c.kind_ = Kind::constant;
  c.coeffs_.push_back(std::move(value));
  return c;
}

ComponentCurve ComponentCurve::polynomial(std::vector<Eigen::MatrixXd> coeffs) {
  if (coeffs.empty())
    throw PreconditionError("ComponentCurve::polynomial: no coefficients");
  ComponentCurve c;
  c.kind_ = Kind::polynomial;
  c.coeffs_ = std::move(coeffs);
  return c;
}

ComponentCurve ComponentCurve::diagonal_profile(
    std::vector<std::vector<double>> entry_coeffs) {
  if (entry_coeffs.empty())
    throw PreconditionError("ComponentCurve::diagonal_profile: empty profile");
  ComponentCurve c;
  c.kind_ = Kind::diagonal_profile;
  c.diag_ = std::move(entry_coeffs);
  return c;
}

ComponentCurve ComponentCurve::tabulated(double t0, double h,
                                         std::vector<Eigen::MatrixXd> values,
                                         int interp_order) {
  if (values.size() < 2)
    throw PreconditionError("ComponentCurve::tabulated: needs at least 2 nodes");
  if (interp_order != 1 && interp_order != 3)
    throw PreconditionError("ComponentCurve::tabulated: interp order must be 1 or 3");
  ComponentCurve c;
  c.kind_ = Kind::tabulated;
  c.coeffs_ = std::move(values);
  c.t0_ = t0;
  c.h_ = h;
  c.order_ = (c.coeffs_.size() < 4) ? 1 : interp_order;
  return c;
}

Eigen::Index ComponentCurve::rows() const {
  if (kind_ == Kind::diagonal_profile)
    return static_cast<Eigen::Index>(diag_.size());
  return coeffs_.front().rows();
}

bool ComponentCurve::is_constant_zero() const {
  return kind_ == Kind::constant && coeffs_.front().isZero(0.0);
}

bool ComponentCurve::is_constant_identity() const {
  return kind_ == Kind::constant && coeffs_.front().isIdentity(0.0);
}

Eigen::MatrixXd ComponentCurve::eval(double t) const {
  if (coeffs_.empty() && diag_.empty())
    throw PreconditionError("ComponentCurve: evaluating an uninitialized component");
  switch (kind_) {
    case Kind::constant:
      return coeffs_.front();
    case Kind::polynomial: {
      Eigen::MatrixXd acc = coeffs_.back();
      for (size_t j = coeffs_.size() - 1; j-- > 0;) acc = acc * t + coeffs_[j];
      return acc;
    }
    case Kind::diagonal_profile: {
      const Eigen::Index n = rows();
      Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
      for (Eigen::Index k = 0; k < n; ++k) {
        const auto& cs = diag_[static_cast<size_t>(k)];
        double acc = 0.0;
        for (size_t j = cs.size(); j-- > 0;) acc = acc * t + cs[j];
        m(k, k) = acc;
      }
      return m;
    }
    case Kind::tabulated:
      break;
  }
  // Tabulated interpolation.
  const int cells = static_cast<int>(coeffs_.size()) - 1;
  const int cell = locate_cell(t, t0_, h_, cells);
  if (order_ == 1) {
    const double u = (t - (t0_ + cell * h_)) / h_;
    return (1.0 - u) * coeffs_[static_cast<size_t>(cell)] +
           u * coeffs_[static_cast<size_t>(cell + 1)];
  }
  // Cubic 4-point Lagrange stencil, clamped at the ends.
  int s0 = cell - 1;
  if (s0 < 0) s0 = 0;
  if (s0 > cells - 3) s0 = cells - 3;
  const double u = (t - (t0_ + (s0 + 1) * h_)) / h_;
  const double lm1 = -u * (u - 1.0) * (u - 2.0) / 6.0;
  const double l0 = (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0;
  const double l1 = -(u + 1.0) * u * (u - 2.0) / 2.0;
  const double l2 = (u + 1.0) * u * (u - 1.0) / 6.0;
  return lm1 * coeffs_[static_cast<size_t>(s0)] +
         l0 * coeffs_[static_cast<size_t>(s0 + 1)] +
         l1 * coeffs_[static_cast<size_t>(s0 + 2)] +
         l2 * coeffs_[static_cast<size_t>(s0 + 3)];
}

Eigen::MatrixXd ComponentCurve::derivative(double t) const {
  if (coeffs_.empty() && diag_.empty())
    throw PreconditionError("ComponentCurve: evaluating an uninitialized component");
  switch (kind_) {
    case Kind::constant:
      return Eigen::MatrixXd::Zero(coeffs_.front().rows(), coeffs_.front().cols());
    case Kind::polynomial: {
      const Eigen::Index r = coeffs_.front().rows();
      Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(r, coeffs_.front().cols());
      for (size_t j = coeffs_.size(); j-- > 1;)
        acc = acc * t + static_cast<double>(j) * coeffs_[j];
      return acc;
    }
    case Kind::diagonal_profile: {
      const Eigen::Index n = rows();
      Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
      for (Eigen::Index k = 0; k < n; ++k) {
        const auto& cs = diag_[static_cast<size_t>(k)];
        double acc = 0.0;
        for (size_t j = cs.size(); j-- > 1;)
          acc = acc * t + static_cast<double>(j) * cs[j];
        m(k, k) = acc;
      }
      return m;
    }
    case Kind::tabulated:
      break;
  }
  const int cells = static_cast<int>(coeffs_.size()) - 1;
  const int cell = locate_cell(t, t0_, h_, cells);
  if (order_ == 1) {
    return (coeffs_[static_cast<size_t>(cell + 1)] -
            coeffs_[static_cast<size_t>(cell)]) /
           h_;
  }
  int s0 = cell - 1;
  if (s0 < 0) s0 = 0;
  if (s0 > cells - 3) s0 = cells - 3;
  const double u = (t - (t0_ + (s0 + 1) * h_)) / h_;
  const double dm1 = -(3.0 * u * u - 6.0 * u + 2.0) / 6.0;
  const double d0 = (3.0 * u * u - 4.0 * u - 1.0) / 2.0;
  const double d1 = -(3.0 * u * u - 2.0 * u - 2.0) / 2.0;
  const double d2 = (3.0 * u * u - 1.0) / 6.0;
  return (dm1 * coeffs_[static_cast<size_t>(s0)] +
          d0 * coeffs_[static_cast<size_t>(s0 + 1)] +
          d1 * coeffs_[static_cast<size_t>(s0 + 2)] +
          d2 * coeffs_[static_cast<size_t>(s0 + 3)]) /
         h_;
}

Eigen::MatrixXd SymplecticSystemSpec::assemble_at(double t) const {
  const double slack = 1e-9 * (1.0 + std::abs(b_eff - a));
  if (t < a - slack || t > b_eff + slack)
    throw PreconditionError("assemble: t outside [a, b_eff]");
  Eigen::MatrixXd x(2 * n, 2 * n);
  x.topLeftCorner(n, n) = A.eval(t);
  x.topRightCorner(n, n) = B.eval(t);
  x.bottomLeftCorner(n, n) = C.eval(t);
  x.bottomRightCorner(n, n) = -x.topLeftCorner(n, n).transpose();
  return x;
}

Eigen::MatrixXd assemble(const SymplecticSystemSpec& x, double t) {
  return x.assemble_at(t);
}

bool is_positive_system(const SymplecticSystemSpec& x, double h,
                        const Tolerance& tol) {
  const int m = std::max(1, static_cast<int>(std::round((x.b_eff - x.a) / h)));
  for (int i = 0; i <= m; ++i) {
    const double t = x.a + (x.b_eff - x.a) * i / m;
    if (!is_positive_isomorphism(SymOperator(x.B.eval(t)), tol)) return false;
  }
  return true;
}

bool is_riemannian_system(const SymplecticSystemSpec& x, double h,
                          double rel_tol) {
  if (x.A.is_constant_zero() && x.B.is_constant_identity()) return true;
  const int m = std::max(1, static_cast<int>(std::round((x.b_eff - x.a) / h)));
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(x.n, x.n);
  for (int i = 0; i <= m; ++i) {
    const double t = x.a + (x.b_eff - x.a) * i / m;
    if (x.A.eval(t).cwiseAbs().maxCoeff() > rel_tol) return false;
    if ((x.B.eval(t) - id).cwiseAbs().maxCoeff() > rel_tol) return false;
  }
  return true;
}

namespace {

Eigen::MatrixXd rk4_step(const SymplecticSystemSpec& sys, double t,
                         const Eigen::MatrixXd& y, double h) {
  const Eigen::MatrixXd k1 = sys.assemble_at(t) * y;
  const Eigen::MatrixXd xm = sys.assemble_at(t + 0.5 * h);
  const Eigen::MatrixXd k2 = xm * (y + 0.5 * h * k1);
  const Eigen::MatrixXd k3 = xm * (y + 0.5 * h * k2);
  const Eigen::MatrixXd k4 = sys.assemble_at(t + h) * (y + h * k3);
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

double symplecticity_defect(const Eigen::MatrixXd& phi) {
  // ||Phi' J Phi - J||_F (dominates the spectral norm).
  const Eigen::MatrixXd jphi = apply_j(phi);
  Eigen::MatrixXd defect = phi.transpose() * jphi;
  const Eigen::Index n = phi.rows() / 2;
  defect.topRightCorner(n, n) += Eigen::MatrixXd::Identity(n, n);
  defect.bottomLeftCorner(n, n) -= Eigen::MatrixXd::Identity(n, n);
  return defect.norm();
}

Eigen::MatrixXd symplectic_project(Eigen::MatrixXd phi) {
  // Newton correction Phi <- Phi (I + J E / 2), E = Phi' J Phi - J.
  const Eigen::Index n = phi.rows() / 2;
  for (int iter = 0; iter < 3; ++iter) {
    Eigen::MatrixXd e = phi.transpose() * apply_j(phi);
    e.topRightCorner(n, n) += Eigen::MatrixXd::Identity(n, n);
    e.bottomLeftCorner(n, n) -= Eigen::MatrixXd::Identity(n, n);
    phi = phi + 0.5 * phi * apply_j(e);
  }
  return phi;
}

}  // namespace

FundamentalSolution integrate(const SymplecticSystemSpec& x, double h,
                              const IntegrateOptions& options) {
  if (!(h > 0.0)) throw PreconditionError("integrate: step must be positive");
  const double span = x.b_eff - x.a;
  const int m = static_cast<int>(std::round(span / h));
  if (m < 1 || std::abs(m * h - span) > 1e-9 * std::max(1.0, std::abs(span)))
    throw PreconditionError("integrate: (b_eff - a) / h must be integral");

  FundamentalSolution sol;
  sol.a_ = x.a;
  sol.h_ = h;
  sol.system_ = std::make_shared<SymplecticSystemSpec>(x);
  sol.nodes_.reserve(static_cast<size_t>(m) + 1);
  sol.nodes_.push_back(Eigen::MatrixXd::Identity(2 * x.n, 2 * x.n));

  double drift = 0.0;
  for (int i = 0; i < m; ++i) {
    Eigen::MatrixXd next = rk4_step(x, x.a + i * h, sol.nodes_.back(), h);
    if (options.reproject) next = symplectic_project(std::move(next));
    drift = std::max(drift, symplecticity_defect(next));
    sol.nodes_.push_back(std::move(next));
  }
  sol.drift_ = drift;
  if (drift > options.drift_bound) {
    std::ostringstream msg;
    msg << "integrate: symplecticity drift " << drift << " exceeds bound "
        << options.drift_bound;
    throw IntegrationQualityError(msg.str(), drift);
  }
  return sol;
}

Eigen::MatrixXd FundamentalSolution::at(double t) const {
  const double slack = 1e-9 * (1.0 + std::abs(t_end() - a_));
  if (t < a_ - slack || t > t_end() + slack)
    throw PreconditionError("FundamentalSolution::at: t outside the grid");
  const int i = locate_cell(t, a_, h_, steps());
  const double dt = t - (a_ + i * h_);
  if (std::abs(dt) < 1e-14) return nodes_[static_cast<size_t>(i)];
  if (std::abs(dt - h_) < 1e-14) return nodes_[static_cast<size_t>(i) + 1];
  return rk4_step(*system_, a_ + i * h_, nodes_[static_cast<size_t>(i)], dt);
}

Eigen::MatrixXd FundamentalSolution::inverse_at(double t) const {
  // Phi^{-1} = -J Phi' J for symplectic Phi.
  const Eigen::MatrixXd phi = at(t);
  return apply_j(apply_j(phi).transpose());
}

Lagrangian lagrangian_curve(const FundamentalSolution& phi, double t) {
  const Eigen::Index n = phi.system().n;
  Eigen::MatrixXd span = phi.inverse_at(t).rightCols(n);
  return Lagrangian(SymplecticSpace{n}, span);
}

Eigen::MatrixXd exp_differential(const FundamentalSolution& phi, double t) {
  if (!(t > phi.a()))
    throw PreconditionError("exp_differential: requires t > a");
  const Eigen::Index n = phi.system().n;
  return phi.at(t).topRightCorner(n, n) / (t - phi.a());
}

SymOperator xi_tangent(const FundamentalSolution& phi, double t, double dt,
                       const Tolerance& tol, std::uint64_t seed) {
  if (!(dt > 0.0)) throw PreconditionError("xi_tangent: dt must be positive");
  const Lagrangian base = lagrangian_curve(phi, t);
  const Lagrangian companion = common_transversal(base, base, seed, tol);
  const auto value = [&](double s) {
    return chart(base, companion, lagrangian_curve(phi, s), tol).matrix();
  };
  Eigen::MatrixXd d;
  if (t - dt < phi.a()) {
    // One-sided 3-point formula at the left boundary; chart(base) = 0.
    d = (-3.0 * value(t) + 4.0 * value(t + dt) - value(t + 2.0 * dt)) / (2.0 * dt);
  } else if (t + dt > phi.t_end()) {
    d = (3.0 * value(t) - 4.0 * value(t - dt) + value(t - 2.0 * dt)) / (2.0 * dt);
  } else {
    d = (value(t + dt) - value(t - dt)) / (2.0 * dt);
  }
  d = 0.5 * (d + d.transpose());
  return SymOperator(std::move(d));
}

GaugeCurve GaugeCurve::identity(Eigen::Index n, double t0, double h, int nodes) {
  GaugeCurve g;
  g.t0_ = t0;
  g.h_ = h;
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(n, n);
  g.z_.assign(static_cast<size_t>(nodes), id);
  g.w_.assign(static_cast<size_t>(nodes), zero);
  g.zdot_.assign(static_cast<size_t>(nodes), zero);
  g.wdot_.assign(static_cast<size_t>(nodes), zero);
  return g;
}

GaugeCurve GaugeCurve::from_components(const ComponentCurve& z_curve,
                                       const ComponentCurve& w_curve, double t0,
                                       double h, int nodes) {
  GaugeCurve g;
  g.t0_ = t0;
  g.h_ = h;
  g.z_.reserve(static_cast<size_t>(nodes));
  for (int i = 0; i < nodes; ++i) {
    const double t = t0 + i * h;
    g.z_.push_back(z_curve.eval(t));
    g.w_.push_back(w_curve.eval(t));
    g.zdot_.push_back(z_curve.derivative(t));
    g.wdot_.push_back(w_curve.derivative(t));
  }
  g.validate();
  return g;
}

GaugeCurve GaugeCurve::from_nodes(std::vector<Eigen::MatrixXd> z,
                                  std::vector<Eigen::MatrixXd> w, double t0,
                                  double h) {
  GaugeCurve g;
  g.t0_ = t0;
  g.h_ = h;
  g.z_ = std::move(z);
  g.w_ = std::move(w);
  const int nodes = g.nodes();
  if (nodes < 2) throw PreconditionError("GaugeCurve: needs at least 2 nodes");
  const auto fd = [&](const std::vector<Eigen::MatrixXd>& v,
                      int i) -> Eigen::MatrixXd {
    if (i == 0) return (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    if (i == nodes - 1)
      return (3.0 * v.back() - 4.0 * v[v.size() - 2] + v[v.size() - 3]) / (2.0 * h);
    return (v[static_cast<size_t>(i) + 1] - v[static_cast<size_t>(i) - 1]) / (2.0 * h);
  };
  for (int i = 0; i < nodes; ++i) {
    g.zdot_.push_back(fd(g.z_, i));
    g.wdot_.push_back(fd(g.w_, i));
  }
  g.validate();
  return g;
}

GaugeCurve GaugeCurve::from_nodes_with_derivatives(
    std::vector<Eigen::MatrixXd> z, std::vector<Eigen::MatrixXd> w,
    std::vector<Eigen::MatrixXd> zdot, std::vector<Eigen::MatrixXd> wdot,
    double t0, double h) {
  GaugeCurve g;
  g.t0_ = t0;
  g.h_ = h;
  g.z_ = std::move(z);
  g.w_ = std::move(w);
  g.zdot_ = std::move(zdot);
  g.wdot_ = std::move(wdot);
  g.validate();
  return g;
}

Eigen::MatrixXd GaugeCurve::phi(int i) const {
  const Eigen::MatrixXd& zz = z(i);
  const Eigen::Index n = zz.rows();
  const Eigen::MatrixXd zinvt = zz.transpose().partialPivLu().inverse();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  out.topLeftCorner(n, n) = zz;
  out.bottomLeftCorner(n, n) = zinvt * w(i);
  out.bottomRightCorner(n, n) = zinvt;
  return out;
}

void GaugeCurve::validate() const {
  if (z_.size() != w_.size() || z_.size() != zdot_.size() ||
      z_.size() != wdot_.size() || z_.empty())
    throw PreconditionError("GaugeCurve: inconsistent node arrays");
  for (int i = 0; i < nodes(); ++i) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(z(i));
    const double rcond = lu.rcond();
    if (!(rcond > 1e-13))
      throw PreconditionError("GaugeCurve: Z singular at a node");
    const double wsym = (w(i) - w(i).transpose()).cwiseAbs().maxCoeff();
    if (wsym > 1e-10 * (1.0 + w(i).cwiseAbs().maxCoeff()))
      throw PreconditionError("GaugeCurve: W not symmetric at a node");
    if (symplecticity_defect(phi(i)) > 1e-8 * (1.0 + z(i).norm()))
      throw QualityError("GaugeCurve: assembled gauge not symplectic", 0.0);
  }
}

SymplecticSystemSpec gauge_transform(const SymplecticSystemSpec& x,
                                     const GaugeCurve& g, const Tolerance&) {
  if (std::abs(g.t0() - x.a) > 1e-12)
    throw PreconditionError("gauge_transform: gauge grid must start at a");
  const int nodes = g.nodes();
  const double span = x.b_eff - x.a;
  if (std::abs((nodes - 1) * g.h() - span) > 1e-9 * std::max(1.0, span))
    throw PreconditionError("gauge_transform: gauge grid must cover [a, b_eff]");

  std::vector<Eigen::MatrixXd> va, vb, vc;
  va.reserve(static_cast<size_t>(nodes));
  for (int i = 0; i < nodes; ++i) {
    const double t = g.t0() + i * g.h();
    const Eigen::MatrixXd a = x.A.eval(t);
    const Eigen::MatrixXd b = x.B.eval(t);
    const Eigen::MatrixXd c = x.C.eval(t);
    const Eigen::MatrixXd& z = g.z(i);
    const Eigen::MatrixXd& w = g.w(i);
    Eigen::PartialPivLU<Eigen::MatrixXd> zlu(z);
    if (!(zlu.rcond() > 1e-13))
      throw PreconditionError("gauge_transform: Z singular at a node");
    const Eigen::MatrixXd zinv = zlu.inverse();

    va.push_back(z * a * zinv - z * b * w * zinv + g.zdot(i) * zinv);
    vb.push_back(z * b * z.transpose());
    vc.push_back(zinv.transpose() *
                 (w * a + c - w * b * w + a.transpose() * w + g.wdot(i)) * zinv);
    // Symmetrize the self-adjoint blocks (solver noise only).
    vb.back() = 0.5 * (vb.back() + vb.back().transpose());
    vc.back() = 0.5 * (vc.back() + vc.back().transpose());
  }

  SymplecticSystemSpec out;
  out.n = x.n;
  out.a = x.a;
  out.b_eff = x.b_eff;
  out.A = ComponentCurve::tabulated(x.a, g.h(), std::move(va), 3);
  out.B = ComponentCurve::tabulated(x.a, g.h(), std::move(vb), 3);
  out.C = ComponentCurve::tabulated(x.a, g.h(), std::move(vc), 3);
  out.prescribed = x.prescribed;
  return out;
}

RiemannianReduction riemannian_reduce(const SymplecticSystemSpec& x, double h,
                                      const Tolerance& tol) {
  const double span = x.b_eff - x.a;
  const int m = static_cast<int>(std::round(span / h));
  if (m < 1 || std::abs(m * h - span) > 1e-9 * std::max(1.0, span))
    throw PreconditionError("riemannian_reduce: (b_eff - a) / h must be integral");
  if (!is_positive_system(x, h, tol))
    throw PreconditionError("riemannian_reduce: system is not positive");

  if (x.A.is_constant_zero() && x.B.is_constant_identity()) {
    return RiemannianReduction{x, GaugeCurve::identity(x.n, x.a, h, m + 1), 0.0,
                               0.0};
  }

  // Stage 1 data, exact pointwise: Z1 = B^{-1/2}, Z1' from the Sylvester
  // identity S' S + S S' = B' for S = B^{1/2}; then
  // A1 = Z1 A Z1^{-1} + Z1' Z1^{-1} and W2 = (A1 + A1')/2.
  struct Stage1 {
    Eigen::MatrixXd z1, z1dot, sqrt_b;
  };
  const auto stage1_at = [&](double t) {
    const Eigen::MatrixXd b = x.B.eval(t);
    const Eigen::MatrixXd bdot = x.B.derivative(t);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (b + b.transpose()));
    if (es.info() != Eigen::Success)
      throw EigensolverError("riemannian_reduce: eigensolver failed on B(t)");
    const Eigen::VectorXd lam = es.eigenvalues();
    if (lam(0) < tol.gap_tol)
      throw PreconditionError("riemannian_reduce: B(t) not positive at gap_tol");
    const Eigen::VectorXd sq = lam.array().sqrt();
    const Eigen::MatrixXd v = es.eigenvectors();
    const Eigen::MatrixXd sqrt_b = v * sq.asDiagonal() * v.transpose();
    const Eigen::MatrixXd inv_sqrt_b =
        v * sq.cwiseInverse().asDiagonal() * v.transpose();
    Eigen::MatrixXd bde = v.transpose() * (0.5 * (bdot + bdot.transpose())) * v;
    for (Eigen::Index i = 0; i < lam.size(); ++i)
      for (Eigen::Index j = 0; j < lam.size(); ++j) bde(i, j) /= sq(i) + sq(j);
    const Eigen::MatrixXd sqrt_b_dot = v * bde * v.transpose();
    return Stage1{inv_sqrt_b, -inv_sqrt_b * sqrt_b_dot * inv_sqrt_b, sqrt_b};
  };
  const auto a1_at = [&](double t) {
    const Stage1 s = stage1_at(t);
    return (s.z1 * x.A.eval(t) * s.sqrt_b + s.z1dot * s.sqrt_b).eval();
  };
  const auto w2_at = [&](double t) {
    const Eigen::MatrixXd a1 = a1_at(t);
    return (0.5 * (a1 + a1.transpose())).eval();
  };

  // Stage 2: Z2' = Z2 (A1' - A1) / 2, Z2(a) = 1 (RK4 on the same grid).
  std::vector<Eigen::MatrixXd> z2_nodes;
  z2_nodes.reserve(static_cast<size_t>(m) + 1);
  z2_nodes.push_back(Eigen::MatrixXd::Identity(x.n, x.n));
  const auto z2_rhs = [&](double t, const Eigen::MatrixXd& z) {
    const Eigen::MatrixXd a1 = a1_at(t);
    return (0.5 * z * (a1.transpose() - a1)).eval();
  };
  for (int i = 0; i < m; ++i) {
    const double t = x.a + i * h;
    const Eigen::MatrixXd& y = z2_nodes.back();
    const Eigen::MatrixXd k1 = z2_rhs(t, y);
    const Eigen::MatrixXd k2 = z2_rhs(t + 0.5 * h, y + 0.5 * h * k1);
    const Eigen::MatrixXd k3 = z2_rhs(t + 0.5 * h, y + 0.5 * h * k2);
    const Eigen::MatrixXd k4 = z2_rhs(t + h, y + h * k3);
    z2_nodes.push_back(y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  }

  // Composite gauge: Z = Z2 Z1, W = Z1' W2 Z1 (stage-1 W is zero).
  std::vector<Eigen::MatrixXd> zc, wc, zcdot, wcdot;
  zc.reserve(static_cast<size_t>(m) + 1);
  const double fd_step = 1e-5 * std::max(1.0, std::abs(span));
  for (int i = 0; i <= m; ++i) {
    const double t = x.a + i * h;
    const Stage1 s1 = stage1_at(t);
    const Eigen::MatrixXd a1 = a1_at(t);
    const Eigen::MatrixXd w2 = 0.5 * (a1 + a1.transpose());
    const Eigen::MatrixXd w2dot =
        (w2_at(t + fd_step) - w2_at(t - fd_step)) / (2.0 * fd_step);
    const Eigen::MatrixXd& z2 = z2_nodes[static_cast<size_t>(i)];
    const Eigen::MatrixXd z2dot = 0.5 * z2 * (a1.transpose() - a1);

    zc.push_back(z2 * s1.z1);
    wc.push_back(s1.z1.transpose() * w2 * s1.z1);
    zcdot.push_back(z2dot * s1.z1 + z2 * s1.z1dot);
    wcdot.push_back(s1.z1dot.transpose() * w2 * s1.z1 +
                    s1.z1.transpose() * w2dot * s1.z1 +
                    s1.z1.transpose() * w2 * s1.z1dot);
    wc.back() = 0.5 * (wc.back() + wc.back().transpose());
    wcdot.back() = 0.5 * (wcdot.back() + wcdot.back().transpose());
  }

  GaugeCurve gauge = GaugeCurve::from_nodes_with_derivatives(
      std::move(zc), std::move(wc), std::move(zcdot), std::move(wcdot), x.a, h);
  SymplecticSystemSpec reduced = gauge_transform(x, gauge, tol);

  // The identities force A~ = 0, B~ = I; measure the numerical residual and
  // snap the output to exact Riemannian form.
  double res_a = 0.0, res_b = 0.0;
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(x.n, x.n);
  std::vector<Eigen::MatrixXd> c_nodes;
  c_nodes.reserve(static_cast<size_t>(m) + 1);
  for (int i = 0; i <= m; ++i) {
    const double t = x.a + i * h;
    res_a = std::max(res_a, reduced.A.eval(t).cwiseAbs().maxCoeff());
    res_b = std::max(res_b, (reduced.B.eval(t) - id).cwiseAbs().maxCoeff());
    c_nodes.push_back(reduced.C.eval(t));
  }
  if (res_a > 1e-8 || res_b > 1e-8)
    throw QualityError("riemannian_reduce: reduction residual exceeds 1e-8",
                       std::max(res_a, res_b));

  SymplecticSystemSpec out;
  out.n = x.n;
  out.a = x.a;
  out.b_eff = x.b_eff;
  out.A = ComponentCurve::constant(Eigen::MatrixXd::Zero(x.n, x.n));
  out.B = ComponentCurve::constant(id);
  out.C = ComponentCurve::tabulated(x.a, h, std::move(c_nodes), 3);
  out.prescribed = x.prescribed;
  return RiemannianReduction{std::move(out), std::move(gauge), res_a, res_b};
}

}  // namespace conjflow
