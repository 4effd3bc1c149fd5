#include "conjflow/construct.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace conjflow {

namespace {

const char* provenance_name(EntryProvenance p) {
  return p == EntryProvenance::point_spectrum ? "point_spectrum"
                                              : "continuum_sample";
}

double spectral_norm(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const auto& v = es.eigenvalues();
  return std::max(std::abs(v(0)), std::abs(v(v.size() - 1)));
}

double max_eig(const SymOperator& s) {
  const std::vector<double> spec = spectrum(s);
  return spec.back();
}

}  // namespace

void SingularityPrescription::validate() const {
  const double hi = upper();
  const double lo = b_infinite ? 0.0 : c;
  if (!b_infinite && !(c < b))
    throw PreconditionError("prescription: requires c < b");
  if (budget < 1) throw PreconditionError("prescription: budget must be >= 1");
  if (inf_cap < 1) throw PreconditionError("prescription: inf_cap must be >= 1");
  if (!(density > 0.0))
    throw PreconditionError("prescription: density must be positive");
  for (const PrescribedPoint& pt : points) {
    if (!(pt.t > lo && pt.t < hi))
      throw PreconditionError(
          "prescription: point outside the open prescription interval");
    if (pt.multiplicity < 1)
      throw PreconditionError("prescription: multiplicity must be >= 1");
  }
  for (size_t i = 0; i < points.size(); ++i)
    for (size_t j = i + 1; j < points.size(); ++j)
      if (points[i].t == points[j].t)
        throw PreconditionError("prescription: duplicate point entries");
  for (const PrescribedInterval& iv : intervals) {
    if (!(iv.lo < iv.hi))
      throw PreconditionError("prescription: interval requires lo < hi");
    if (!(iv.lo > lo && iv.hi < hi))
      throw PreconditionError(
          "prescription: interval outside the open prescription interval");
  }
}

BuiltOperator build_operator(const SingularityPrescription& p) {
  p.validate();

  struct Entry {
    double value;
    EntryProvenance provenance;
  };
  std::vector<Entry> entries;
  bool capped = false;

  for (const PrescribedPoint& pt : p.points) {
    unsigned reps = pt.multiplicity;
    if (reps == kInfiniteMultiplicity) {
      reps = p.inf_cap;
      capped = true;
    }
    reps = std::min(reps, static_cast<unsigned>(p.budget));
    for (unsigned r = 0; r < std::max(reps, 1u); ++r)
      entries.push_back({pt.t, EntryProvenance::point_spectrum});
  }
  for (const PrescribedInterval& iv : p.intervals) {
    const int num =
        std::max(2, static_cast<int>(std::round(p.density * (iv.hi - iv.lo))));
    for (int k = 0; k < num; ++k) {
      const double v = iv.lo + (iv.hi - iv.lo) * k / (num - 1);
      entries.push_back({v, EntryProvenance::continuum_sample});
    }
  }

  if (static_cast<int>(entries.size()) > p.budget) {
    std::ostringstream msg;
    msg << "build_operator: budget exhausted (required " << entries.size()
        << ", available " << p.budget << ")";
    throw PreconditionError(msg.str());
  }
  if (entries.empty()) {
    // Empty prescription: a single sentinel eigenvalue below the interval, so
    // the induced curve is nowhere singular.
    entries.push_back({p.b_infinite ? -0.5 : p.c - 1.0,
                       EntryProvenance::point_spectrum});
  }

  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.value < b.value; });

  BuiltOperator out{SymOperator::Zero(1), {}, {}, capped};
  for (const Entry& e : entries) {
    out.diag.push_back(e.value);
    out.provenance.push_back(e.provenance);
  }
  out.op = SymOperator::Diagonal(out.diag);
  return out;
}

OperatorCurve::OperatorCurve(SymOperator a, double c, bool theta_mode)
    : a_(std::move(a)), c_(c), theta_mode_(theta_mode) {}

double OperatorCurve::tau(double t) const {
  if (!theta_mode_) return t;
  const double s = t - c_;
  return s / (1.0 + s);
}

double OperatorCurve::tau_inverse(double s) const {
  if (!theta_mode_) return s;
  if (!(s < 1.0))
    throw PreconditionError("OperatorCurve: theta image point must be < 1");
  return c_ + s / (1.0 - s);
}

SymOperator OperatorCurve::at(double t) const {
  Eigen::MatrixXd m = -a_.matrix();
  m.diagonal().array() += tau(t);
  return SymOperator(std::move(m));
}

SymOperator OperatorCurve::derivative(double t) const {
  double rate = 1.0;
  if (theta_mode_) {
    const double s = 1.0 + (t - c_);
    rate = 1.0 / (s * s);
  }
  return SymOperator(rate * Eigen::MatrixXd::Identity(a_.dim(), a_.dim()));
}

std::shared_ptr<const OperatorCurve> prescribed_curve(
    const SingularityPrescription& p, const SymOperator& a) {
  return std::make_shared<OperatorCurve>(a, p.c, p.b_infinite);
}

SymOperator LagrangianCurve::tangent(double t) const {
  const double dt = 1e-5 * std::max(1.0, std::abs(hi_ - lo_));
  const Lagrangian base = at(t);
  const Lagrangian companion = common_transversal(base, base, 0, Tolerance{});
  const auto value = [&](double s) {
    return chart(base, companion, at(s)).matrix();
  };
  Eigen::MatrixXd d;
  if (t - dt < lo_)
    d = (-3.0 * value(t) + 4.0 * value(t + dt) - value(t + 2.0 * dt)) / (2.0 * dt);
  else if (t + dt > hi_)
    d = (3.0 * value(t) - 4.0 * value(t - dt) + value(t - 2.0 * dt)) / (2.0 * dt);
  else
    d = (value(t + dt) - value(t - dt)) / (2.0 * dt);
  d = 0.5 * (d + d.transpose());
  return SymOperator(std::move(d));
}

namespace {

// Congruence transport of a chart-space derivative S' to the tangent operator
// at L in frame coordinates: H = eta^{-*} S' eta^{-1}.
SymOperator congruence_tangent(const Lagrangian& l0, const Lagrangian& l1,
                               const Lagrangian& l, const Eigen::MatrixXd& sdot) {
  const Eigen::MatrixXd eta = chart_projection(l0, l1, l);
  const Eigen::MatrixXd x = eta.transpose().partialPivLu().solve(sdot);
  Eigen::MatrixXd h = eta.transpose().partialPivLu().solve(x.transpose()).transpose();
  h = 0.5 * (h + h.transpose());
  return SymOperator(std::move(h));
}

class ChartedCurve final : public LagrangianCurve {
 public:
  ChartedCurve(std::shared_ptr<const OperatorCurve> curve, double b_eff,
               const Tolerance& tol)
      : LagrangianCurve(curve->c(), b_eff),
        curve_(std::move(curve)),
        l0_(Lagrangian::vertical(curve_->generator().dim())),
        l1_(Lagrangian::horizontal(curve_->generator().dim())),
        tol_(tol) {}

  Lagrangian at(double t) const override {
    return chart_inverse(l0_, l1_, curve_->at(t).scaled(-1.0), tol_);
  }

  SymOperator tangent(double t) const override {
    return congruence_tangent(l0_, l1_, at(t),
                              -curve_->derivative(t).matrix());
  }

 private:
  std::shared_ptr<const OperatorCurve> curve_;
  Lagrangian l0_, l1_;
  Tolerance tol_;
};

// sigma(t) = Pfun(t) U + Qfun(t) D on [a, c], glued to the tail at c.
struct GlueProfile {
  double a, c, t2, len;  // q supported on [t2, c], len = c - t2
  double big_p;          // integral of p over [a, c]

  double p(double t) const { return c - t; }
  double pfun(double t) const {
    return 0.5 * ((c - a) * (c - a) - (c - t) * (c - t));
  }
  static double smoothstep(double u) { return u * u * (3.0 - 2.0 * u); }
  static double smoothstep_int(double u) { return u * u * u * (1.0 - 0.5 * u); }
  double q(double t) const {
    if (t <= t2) return 0.0;
    return smoothstep((t - t2) / len);
  }
  double qfun(double t) const {
    if (t <= t2) return 0.0;
    return len * smoothstep_int((t - t2) / len);
  }
};

class GluedCurve final : public LagrangianCurve {
 public:
  GluedCurve(std::shared_ptr<const LagrangianCurve> tail, Lagrangian l0,
             Lagrangian l1_star, GlueProfile profile, Eigen::MatrixXd u,
             Eigen::MatrixXd d, const Tolerance& tol)
      : LagrangianCurve(profile.a, tail->hi()),
        tail_(std::move(tail)),
        l0_(std::move(l0)),
        l1_star_(std::move(l1_star)),
        profile_(profile),
        u_(std::move(u)),
        d_(std::move(d)),
        tol_(tol) {}

  Eigen::MatrixXd sigma(double t) const {
    return profile_.pfun(t) / profile_.big_p * u_ + profile_.qfun(t) * d_;
  }
  Eigen::MatrixXd sigma_dot(double t) const {
    return profile_.p(t) / profile_.big_p * u_ + profile_.q(t) * d_;
  }
  double glue_instant() const { return profile_.c; }

  Lagrangian at(double t) const override {
    if (t >= profile_.c) return tail_->at(t);
    return chart_inverse(l0_, l1_star_, SymOperator(sigma(t)), tol_);
  }

  SymOperator tangent(double t) const override {
    if (t >= profile_.c) return tail_->tangent(t);
    return congruence_tangent(l0_, l1_star_, at(t), sigma_dot(t));
  }

 private:
  std::shared_ptr<const LagrangianCurve> tail_;
  Lagrangian l0_, l1_star_;
  GlueProfile profile_;
  Eigen::MatrixXd u_, d_;
  Tolerance tol_;
};

}  // namespace

std::shared_ptr<const LagrangianCurve> curve_to_xi(
    std::shared_ptr<const OperatorCurve> curve, double b_eff,
    const Tolerance& tol) {
  if (!curve) throw PreconditionError("curve_to_xi: null curve");
  if (!(b_eff > curve->c()))
    throw PreconditionError("curve_to_xi: requires b_eff > c");
  return std::make_shared<ChartedCurve>(std::move(curve), b_eff, tol);
}

XiExtension extend_xi(std::shared_ptr<const LagrangianCurve> xi_bar, double a,
                      double grid_h, const Tolerance& tol) {
  if (!xi_bar) throw PreconditionError("extend_xi: null curve");
  const double c = xi_bar->lo();
  if (!(a < c)) throw PreconditionError("extend_xi: requires a < c");
  const Eigen::Index n = xi_bar->at(c).n();
  const Lagrangian l0 = Lagrangian::vertical(n);

  const Lagrangian xi_c = xi_bar->at(c);
  const double gap = transversality_gap(xi_c, l0);
  if (gap < tol.gap_tol)
    throw ChartDomainError("extend_xi: xi(c) not transversal to L0", gap);

  // Companion with chart(L0, xi(c), L1*) = 1, so chart(L0, L1*, xi(c)) = -1.
  const Lagrangian l1_star =
      chart_inverse(l0, xi_c, SymOperator::Identity(n), tol);
  ExtensionReport report;
  report.chart_selfcheck =
      (chart(l0, l1_star, xi_c, tol).matrix() +
       Eigen::MatrixXd::Identity(n, n))
          .cwiseAbs()
          .maxCoeff();
  if (report.chart_selfcheck > 1e-6)
    throw QualityError("extend_xi: companion selfcheck failed",
                       report.chart_selfcheck);

  // D = sigma_bar'(c) via the chart differential of the tail's tangent.
  const SymOperator tail_tangent = xi_bar->tangent(c);
  const Eigen::MatrixXd eta = chart_projection(l0, l1_star, xi_c);
  Eigen::MatrixXd d = eta.transpose() * tail_tangent.matrix() * eta;
  d = 0.5 * (d + d.transpose());
  if (max_eig(SymOperator(d)) >= 0.0)
    throw PreconditionError(
        "extend_xi: chart derivative at c is not negative definite");

  GlueProfile profile;
  profile.a = a;
  profile.c = c;
  profile.len = std::min(0.5 * (c - a), 0.5 / std::max(spectral_norm(d), 1e-3));
  profile.t2 = c - profile.len;
  profile.big_p = 0.5 * (c - a) * (c - a);
  const double q_mass = 0.5 * profile.len;

  const Eigen::MatrixXd u =
      (-Eigen::MatrixXd::Identity(n, n) - q_mass * d) / profile.big_p;
  auto curve = std::make_shared<GluedCurve>(xi_bar, l0, l1_star, profile, u, d, tol);

  // Verify the four extension postconditions on the sampling grid.
  report.value_match = (curve->sigma(c) + Eigen::MatrixXd::Identity(n, n))
                           .cwiseAbs()
                           .maxCoeff();
  {
    const double h = std::min(grid_h, 0.25 * (c - a));
    const Eigen::MatrixXd fd =
        (-3.0 * curve->sigma(c) + 4.0 * chart(l0, l1_star, xi_bar->at(c + h), tol).matrix() -
         chart(l0, l1_star, xi_bar->at(c + 2.0 * h), tol).matrix()) /
        (2.0 * h);
    report.derivative_match_fd = (fd - d).cwiseAbs().maxCoeff();
  }
  const int samples = std::max(4, static_cast<int>(std::ceil((c - a) / grid_h)));
  report.max_sigma_eig = -std::numeric_limits<double>::infinity();
  report.max_tau_eig = -std::numeric_limits<double>::infinity();
  for (int i = 0; i <= samples; ++i) {
    const double t = a + (c - a) * i / samples;
    report.max_tau_eig =
        std::max(report.max_tau_eig, max_eig(SymOperator(curve->sigma_dot(t))));
    if (i > 0) {
      report.max_sigma_eig =
          std::max(report.max_sigma_eig, max_eig(SymOperator(curve->sigma(t))));
      if (i < samples) {
        const PairDefect defect = pair_defect(curve->at(t), l0, tol);
        if (defect.intersection_dim != 0 || defect.sum_codim != 0)
          ++report.defect_violations;
      }
    }
  }
  if (curve->sigma(a).cwiseAbs().maxCoeff() != 0.0)
    throw QualityError("extend_xi: sigma(a) != 0",
                       curve->sigma(a).cwiseAbs().maxCoeff());
  if (report.max_sigma_eig >= 0.0)
    throw QualityError("extend_xi: sigma not negative definite on (a, c]",
                       report.max_sigma_eig);
  if (report.max_tau_eig >= 0.0)
    throw QualityError("extend_xi: sigma' not negative definite on [a, c]",
                       report.max_tau_eig);
  if (report.value_match > 1e-12)
    throw QualityError("extend_xi: value mismatch at c", report.value_match);
  if (report.defect_violations > 0)
    throw QualityError("extend_xi: xi(t) left O(L0) inside (a, c)",
                       static_cast<double>(report.defect_violations));

  return XiExtension{std::move(curve), report};
}

LiftedSystem xi_to_system(std::shared_ptr<const LagrangianCurve> xi, double h,
                          const Tolerance& tol) {
  if (!xi) throw PreconditionError("xi_to_system: null curve");
  const double a = xi->lo();
  const double span = xi->hi() - a;
  const int m = static_cast<int>(std::round(span / h));
  if (m < 1 || std::abs(m * h - span) > 1e-9 * std::max(1.0, span))
    throw PreconditionError("xi_to_system: (hi - lo) / h must be integral");
  const Eigen::Index n = xi->at(a).n();

  // X^(t) = -J F S F' with S the tangent in frame coordinates; frame-gauge
  // invariant, so evaluation across chart seams is safe.
  const auto xhat = [&](double t) {
    const Lagrangian l = xi->at(t);
    const SymOperator s = xi->tangent(t);
    const Eigen::MatrixXd hmat = l.frame() * s.matrix() * l.frame().transpose();
    Eigen::MatrixXd jh(2 * n, 2 * n);
    jh.topRows(n) = -hmat.bottomRows(n);
    jh.bottomRows(n) = hmat.topRows(n);
    return (-jh).eval();
  };

  std::vector<Eigen::MatrixXd> psi;
  psi.reserve(static_cast<size_t>(m) + 1);
  psi.push_back(Eigen::MatrixXd::Identity(2 * n, 2 * n));
  for (int i = 0; i < m; ++i) {
    const double t = a + i * h;
    const Eigen::MatrixXd& y = psi.back();
    const Eigen::MatrixXd k1 = xhat(t) * y;
    const Eigen::MatrixXd xm = xhat(t + 0.5 * h);
    const Eigen::MatrixXd k2 = xm * (y + 0.5 * h * k1);
    const Eigen::MatrixXd k3 = xm * (y + 0.5 * h * k2);
    const Eigen::MatrixXd k4 = xhat(t + h) * (y + h * k3);
    psi.push_back(y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  }

  // Lifting check: psi(t)(L0) must span xi(t).
  double drift = 0.0;
  for (int i = 0; i <= m; ++i) {
    const double t = a + i * h;
    const Eigen::MatrixXd lifted = orthonormalize(psi[static_cast<size_t>(i)].rightCols(n));
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(lifted.transpose() * xi->at(t).frame());
    const double cos_min = svd.singularValues()(n - 1);
    const double sin_max = std::sqrt(std::max(0.0, 1.0 - cos_min * cos_min));
    drift = std::max(drift, sin_max);
  }
  if (drift > 1e-6)
    throw QualityError("xi_to_system: lifting drift above 1e-6", drift);

  // X(t) = -psi^{-1} psi' = -psi^{-1} X^ psi, tabulated per node.
  std::vector<Eigen::MatrixXd> va, vb, vc;
  va.reserve(static_cast<size_t>(m) + 1);
  for (int i = 0; i <= m; ++i) {
    const double t = a + i * h;
    const Eigen::MatrixXd x_t =
        -psi[static_cast<size_t>(i)].partialPivLu().solve(xhat(t) * psi[static_cast<size_t>(i)]);
    const SpElement el = SpElement::decompose(x_t, 1e-7);
    va.push_back(el.a);
    vb.push_back(el.b.matrix());
    vc.push_back(el.c.matrix());
  }

  SymplecticSystemSpec out;
  out.n = n;
  out.a = a;
  out.b_eff = a + m * h;
  out.A = ComponentCurve::tabulated(a, h, std::move(va), 3);
  out.B = ComponentCurve::tabulated(a, h, std::move(vb), 3);
  out.C = ComponentCurve::tabulated(a, h, std::move(vc), 3);
  return LiftedSystem{std::move(out), drift};
}

ManifoldScenario::ManifoldScenario(Eigen::Index n, ComponentCurve r, double a,
                                   double b_eff)
    : n_(n), r_(std::move(r)), a_(a), b_eff_(b_eff) {}

double ManifoldScenario::conformal_exponent(const Eigen::VectorXd& p) const {
  if (p.size() != n_ + 1)
    throw DimensionError("ManifoldScenario: point must have dimension n + 1");
  const Eigen::VectorXd x = p.head(n_);
  return x.dot(r_.eval(p(n_)) * x);
}

Eigen::MatrixXd ManifoldScenario::metric(const Eigen::VectorXd& p) const {
  return std::exp(conformal_exponent(p)) *
         Eigen::MatrixXd::Identity(n_ + 1, n_ + 1);
}

std::vector<Eigen::MatrixXd> ManifoldScenario::christoffel(
    const Eigen::VectorXd& p) const {
  const Eigen::VectorXd x = p.head(n_);
  const double t = p(n_);
  Eigen::VectorXd grad(n_ + 1);
  grad.head(n_) = 2.0 * (r_.eval(t) * x);
  grad(n_) = x.dot(r_.derivative(t) * x);

  std::vector<Eigen::MatrixXd> gamma(static_cast<size_t>(n_ + 1));
  for (Eigen::Index i = 0; i <= n_; ++i) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n_ + 1, n_ + 1);
    for (Eigen::Index j = 0; j <= n_; ++j)
      for (Eigen::Index k = 0; k <= n_; ++k) {
        double v = 0.0;
        if (i == k) v += grad(j);
        if (i == j) v += grad(k);
        if (j == k) v -= grad(i);
        g(j, k) = 0.5 * v;
      }
    gamma[static_cast<size_t>(i)] = std::move(g);
  }
  return gamma;
}

std::vector<Eigen::MatrixXd> ManifoldScenario::christoffel_fd(
    const Eigen::VectorXd& p, double fd_step) const {
  const Eigen::Index dim = n_ + 1;
  std::vector<Eigen::MatrixXd> dg(static_cast<size_t>(dim));
  for (Eigen::Index l = 0; l < dim; ++l) {
    Eigen::VectorXd pp = p, pm = p;
    pp(l) += fd_step;
    pm(l) -= fd_step;
    dg[static_cast<size_t>(l)] = (metric(pp) - metric(pm)) / (2.0 * fd_step);
  }
  const Eigen::MatrixXd ginv = metric(p).inverse();
  std::vector<Eigen::MatrixXd> gamma(static_cast<size_t>(dim));
  for (Eigen::Index i = 0; i < dim; ++i) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(dim, dim);
    for (Eigen::Index j = 0; j < dim; ++j)
      for (Eigen::Index k = 0; k < dim; ++k) {
        double v = 0.0;
        for (Eigen::Index l = 0; l < dim; ++l)
          v += ginv(i, l) * (dg[static_cast<size_t>(j)](l, k) +
                             dg[static_cast<size_t>(k)](j, l) -
                             dg[static_cast<size_t>(l)](j, k));
        g(j, k) = 0.5 * v;
      }
    gamma[static_cast<size_t>(i)] = std::move(g);
  }
  return gamma;
}

Eigen::MatrixXd ManifoldScenario::jacobi_operator_fd(double t,
                                                     double fd_step) const {
  const Eigen::Index dim = n_ + 1;
  const Eigen::Index tau = n_;  // time index
  Eigen::VectorXd p = Eigen::VectorXd::Zero(dim);
  p(tau) = t;

  // d Gamma / d coordinate, central differences of the exact symbols.
  std::vector<std::vector<Eigen::MatrixXd>> dgamma(static_cast<size_t>(dim));
  for (Eigen::Index l = 0; l < dim; ++l) {
    Eigen::VectorXd pp = p, pm = p;
    pp(l) += fd_step;
    pm(l) -= fd_step;
    const auto gp = christoffel(pp);
    const auto gm = christoffel(pm);
    dgamma[static_cast<size_t>(l)].resize(static_cast<size_t>(dim));
    for (Eigen::Index i = 0; i < dim; ++i)
      dgamma[static_cast<size_t>(l)][static_cast<size_t>(i)] =
          (gp[static_cast<size_t>(i)] - gm[static_cast<size_t>(i)]) /
          (2.0 * fd_step);
  }
  const auto gamma = christoffel(p);

  // (R(e_tau, e_alpha) e_tau)^i
  //   = d_tau Gamma^i_{alpha tau} - d_alpha Gamma^i_{tau tau} + Gamma Gamma.
  Eigen::MatrixXd jac(n_, n_);
  for (Eigen::Index i = 0; i < n_; ++i) {
    for (Eigen::Index alpha = 0; alpha < n_; ++alpha) {
      double v = dgamma[static_cast<size_t>(tau)][static_cast<size_t>(i)](alpha, tau) -
                 dgamma[static_cast<size_t>(alpha)][static_cast<size_t>(i)](tau, tau);
      for (Eigen::Index mid = 0; mid < dim; ++mid) {
        v += gamma[static_cast<size_t>(i)](tau, mid) *
                 gamma[static_cast<size_t>(mid)](alpha, tau) -
             gamma[static_cast<size_t>(i)](alpha, mid) *
                 gamma[static_cast<size_t>(mid)](tau, tau);
      }
      jac(i, alpha) = v;
    }
  }
  return jac;
}

double ManifoldScenario::geodesic_deviation(double t0, double span,
                                            double rk_step,
                                            double fd_step) const {
  const Eigen::Index dim = n_ + 1;
  Eigen::VectorXd pos = Eigen::VectorXd::Zero(dim);
  pos(n_) = t0;
  Eigen::VectorXd vel = Eigen::VectorXd::Zero(dim);
  vel(n_) = 1.0;

  const auto accel = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& v) {
    const auto gamma = christoffel_fd(x, fd_step);
    Eigen::VectorXd acc(dim);
    for (Eigen::Index i = 0; i < dim; ++i)
      acc(i) = -v.dot(gamma[static_cast<size_t>(i)] * v);
    return acc;
  };

  const int steps = std::max(1, static_cast<int>(std::round(span / rk_step)));
  const double h = span / steps;
  double deviation = 0.0;
  for (int s = 0; s < steps; ++s) {
    const Eigen::VectorXd k1p = vel;
    const Eigen::VectorXd k1v = accel(pos, vel);
    const Eigen::VectorXd k2p = vel + 0.5 * h * k1v;
    const Eigen::VectorXd k2v = accel(pos + 0.5 * h * k1p, vel + 0.5 * h * k1v);
    const Eigen::VectorXd k3p = vel + 0.5 * h * k2v;
    const Eigen::VectorXd k3v = accel(pos + 0.5 * h * k2p, vel + 0.5 * h * k2v);
    const Eigen::VectorXd k4p = vel + h * k3v;
    const Eigen::VectorXd k4v = accel(pos + h * k3p, vel + h * k3v);
    pos += (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
    vel += (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);

    Eigen::VectorXd axis = Eigen::VectorXd::Zero(dim);
    axis(n_) = t0 + (s + 1) * h;
    deviation = std::max(deviation, (pos - axis).norm());
  }
  return deviation;
}

ManifoldScenario realize_metric(const SymplecticSystemSpec& xr,
                                const Tolerance& tol) {
  (void)tol;
  if (!is_riemannian_system(xr, std::max(1e-3, (xr.b_eff - xr.a) / 64.0)))
    throw PreconditionError("realize_metric: system must be Riemannian");
  return ManifoldScenario(xr.n, xr.C, xr.a, xr.b_eff);
}

namespace {

double auto_b_eff(const SingularityPrescription& p, const OperatorCurve& curve,
                  double a, double h) {
  double top = std::numeric_limits<double>::lowest();
  for (const PrescribedPoint& pt : p.points) top = std::max(top, pt.t);
  for (const PrescribedInterval& iv : p.intervals) top = std::max(top, iv.hi);

  double raw;
  if (p.b_infinite) {
    const double s_top = (top == std::numeric_limits<double>::lowest()) ? 0.0 : top;
    raw = curve.tau_inverse(0.5 * (s_top + 1.0));
  } else {
    const double t_top = (top == std::numeric_limits<double>::lowest()) ? p.c : top;
    raw = 0.5 * (t_top + p.b);
  }
  const int m = std::max(2, static_cast<int>(std::ceil((raw - a) / h)));
  return a + m * h;
}

}  // namespace

PrescribedSystem prescribed_system(const SingularityPrescription& p, double a,
                                   const PipelineOptions& options) {
  p.validate();
  if (!(a < p.c)) throw PreconditionError("prescribed_system: requires a < c");
  const Tolerance& tol = options.tol;
  const double h = options.h;

  BuiltOperator op = build_operator(p);
  std::shared_ptr<const OperatorCurve> curve = prescribed_curve(p, op.op);

  double b_eff;
  if (std::isnan(options.b_eff)) {
    b_eff = auto_b_eff(p, *curve, a, h);
  } else {
    const int m = std::max(1, static_cast<int>(std::round((options.b_eff - a) / h)));
    b_eff = a + m * h;
  }

  std::shared_ptr<const LagrangianCurve> xi_bar = curve_to_xi(curve, b_eff, tol);
  XiExtension ext = extend_xi(xi_bar, a, h, tol);
  LiftedSystem lift = xi_to_system(ext.curve, h, tol);
  lift.system.prescribed = curve;
  return PrescribedSystem{std::move(op), std::move(curve),
                          std::move(lift.system), ext.report,
                          lift.lifting_drift};
}

PipelineResult full_pipeline(const SingularityPrescription& p, double a,
                             const PipelineOptions& options) {
  const Tolerance& tol = options.tol;
  const double h = options.h;

  PrescribedSystem pre = prescribed_system(p, a, options);
  BuiltOperator& op = pre.op;
  std::shared_ptr<const OperatorCurve> curve = pre.curve;
  RiemannianReduction red = riemannian_reduce(pre.system, h, tol);
  ManifoldScenario scenario = realize_metric(red.system, tol);

  DetectOptions detect_options;
  detect_options.step = h;
  detect_options.seed = options.seed;
  ConjugateReport report = detect(red.system, detect_options, tol);

  // Label instants with prescription provenance.
  for (ConjugateInstant& instant : report.instants) {
    const double s = curve->tau(instant.t);
    double best = std::numeric_limits<double>::infinity();
    size_t best_j = 0;
    for (size_t j = 0; j < op.diag.size(); ++j) {
      const double dist = std::abs(op.diag[j] - s);
      if (dist < best) {
        best = dist;
        best_j = j;
      }
    }
    if (best <= 1e-6) {
      instant.provenance = provenance_name(op.provenance[best_j]);
      instant.prescribed_value = op.diag[best_j];
    }
  }

  StageMetrics metrics;
  metrics.extension = pre.extension;
  metrics.lifting_drift = pre.lifting_drift;
  metrics.reduction_residual_a = red.residual_a;
  metrics.reduction_residual_b = red.residual_b;
  metrics.symplectic_drift = report.quality.symplectic_drift;

  return PipelineResult{std::move(op),           std::move(curve),
                        std::move(red.system),   std::move(scenario),
                        std::move(report),       metrics};
}

std::vector<ExpectedInstant> expected_instants(const BuiltOperator& op) {
  std::map<double, ExpectedInstant> grouped;
  for (size_t j = 0; j < op.diag.size(); ++j) {
    auto [it, inserted] = grouped.try_emplace(op.diag[j]);
    it->second.value = op.diag[j];
    it->second.multiplicity += 1;
    if (inserted)
      it->second.provenance = op.provenance[j];
    else if (op.provenance[j] == EntryProvenance::point_spectrum)
      it->second.provenance = EntryProvenance::point_spectrum;
  }
  std::vector<ExpectedInstant> out;
  out.reserve(grouped.size());
  for (auto& [value, entry] : grouped) out.push_back(entry);
  return out;
}

RoundtripVerdict verify_roundtrip(const PipelineResult& result, double t_tol) {
  const OperatorCurve& curve = *result.curve;
  const double s_floor = curve.tau(curve.c());

  std::vector<ExpectedInstant> expected;
  for (const ExpectedInstant& e : expected_instants(result.op))
    if (e.value > s_floor + t_tol) expected.push_back(e);

  std::ostringstream detail;
  for (const ConjugateInstant& instant : result.report.instants) {
    if (instant.t <= curve.c()) {
      detail << "instant at t = " << instant.t << " inside the extension (a, c]";
      return RoundtripVerdict{false, detail.str()};
    }
  }
  if (result.report.instants.size() != expected.size()) {
    detail << "instant count " << result.report.instants.size() << " != expected "
           << expected.size();
    return RoundtripVerdict{false, detail.str()};
  }
  for (size_t i = 0; i < expected.size(); ++i) {
    const ConjugateInstant& got = result.report.instants[i];
    const double s = curve.tau(got.t);
    if (std::abs(s - expected[i].value) > t_tol) {
      detail << "instant " << i << ": value " << s << " != prescribed "
             << expected[i].value;
      return RoundtripVerdict{false, detail.str()};
    }
    if (got.multiplicity != expected[i].multiplicity) {
      detail << "instant " << i << ": multiplicity " << got.multiplicity
             << " != prescribed " << expected[i].multiplicity;
      return RoundtripVerdict{false, detail.str()};
    }
  }
  return RoundtripVerdict{true, "all prescribed instants reproduced"};
}

}  // namespace conjflow
