#include "conjflow/symplectic.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace conjflow {

Eigen::MatrixXd SymplecticSpace::J() const {
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  j.topRightCorner(n, n) = -Eigen::MatrixXd::Identity(n, n);
  j.bottomLeftCorner(n, n) = Eigen::MatrixXd::Identity(n, n);
  return j;
}

double omega(const SymplecticSpace& space, const Eigen::VectorXd& u,
             const Eigen::VectorXd& v) {
  if (u.size() != space.dim() || v.size() != space.dim())
    throw DimensionError("omega: vectors must have dimension 2n");
  const Eigen::Index n = space.n;
  // <J u, v> with J(x, y) = (-y, x), written without forming J.
  return -u.tail(n).dot(v.head(n)) + u.head(n).dot(v.tail(n));
}

Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& frame) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(frame);
  Eigen::MatrixXd q = qr.householderQ() *
                      Eigen::MatrixXd::Identity(frame.rows(), frame.cols());
  // Fix the gauge so R has positive diagonal; keeps [0; I] and [I; 0] intact.
  const Eigen::MatrixXd r = q.transpose() * frame;
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

bool is_lagrangian(const Eigen::MatrixXd& frame, const Tolerance& tol) {
  if (frame.rows() != 2 * frame.cols() || frame.cols() < 1) return false;
  const Eigen::Index n = frame.cols();
  const Eigen::MatrixXd gram =
      frame.transpose() * frame - Eigen::MatrixXd::Identity(n, n);
  if (gram.cwiseAbs().maxCoeff() > 1e-12 + tol.kernel_tol) return false;
  // frame' J frame without forming J: rows (x, y) -> (-y, x).
  Eigen::MatrixXd jf(frame.rows(), n);
  jf.topRows(n) = -frame.bottomRows(n);
  jf.bottomRows(n) = frame.topRows(n);
  const Eigen::MatrixXd iso = frame.transpose() * jf;
  return iso.cwiseAbs().maxCoeff() <= 1e-10;
}

Lagrangian::Lagrangian(const SymplecticSpace& space, const Eigen::MatrixXd& span,
                       const Tolerance& tol)
    : space_(space) {
  if (span.rows() != space.dim() || span.cols() != space.n)
    throw DimensionError("Lagrangian: frame must be 2n x n");
  frame_ = orthonormalize(span);
  if (!is_lagrangian(frame_, tol))
    throw PreconditionError("Lagrangian: span is not isotropic of rank n");
}

Lagrangian::Lagrangian(const SymplecticSpace& space, Eigen::MatrixXd frame, int)
    : space_(space), frame_(std::move(frame)) {}

Lagrangian Lagrangian::vertical(Eigen::Index n) {
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(2 * n, n);
  f.bottomRows(n) = Eigen::MatrixXd::Identity(n, n);
  return Lagrangian(SymplecticSpace{n}, std::move(f), 0);
}

Lagrangian Lagrangian::horizontal(Eigen::Index n) {
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(2 * n, n);
  f.topRows(n) = Eigen::MatrixXd::Identity(n, n);
  return Lagrangian(SymplecticSpace{n}, std::move(f), 0);
}

double transversality_gap(const Lagrangian& p, const Lagrangian& q) {
  if (p.n() != q.n()) throw DimensionError("transversality_gap: dimension mismatch");
  Eigen::MatrixXd stacked(p.frame().rows(), 2 * p.n());
  stacked.leftCols(p.n()) = p.frame();
  stacked.rightCols(q.n()) = q.frame();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(stacked);
  return svd.singularValues()(svd.singularValues().size() - 1);
}

namespace {

Eigen::MatrixXd apply_j(const Eigen::MatrixXd& m) {
  const Eigen::Index n = m.rows() / 2;
  Eigen::MatrixXd out(m.rows(), m.cols());
  out.topRows(n) = -m.bottomRows(n);
  out.bottomRows(n) = m.topRows(n);
  return out;
}

// rho_{L1,L0} = P_{L0} J|_{L1} in frame coordinates: F0' J F1.
Eigen::MatrixXd rho_coords(const Lagrangian& l0, const Lagrangian& l1) {
  return l0.frame().transpose() * apply_j(l1.frame());
}

}  // namespace

SymOperator chart(const Lagrangian& l0, const Lagrangian& l1,
                  const Lagrangian& l, const Tolerance& tol) {
  if (l0.n() != l1.n() || l0.n() != l.n())
    throw DimensionError("chart: dimension mismatch");
  const Eigen::Index n = l0.n();

  const double base_gap = transversality_gap(l0, l1);
  if (base_gap < tol.gap_tol) {
    std::ostringstream msg;
    msg << "chart: base pair not transversal (gap " << base_gap << ")";
    throw ChartDomainError(msg.str(), base_gap);
  }
  const double gap = transversality_gap(l, l1);
  if (gap < tol.gap_tol) {
    std::ostringstream msg;
    msg << "chart: L not transversal to L1 (gap " << gap << ")";
    throw ChartDomainError(msg.str(), gap);
  }

  // Decompose L's frame over L0 ⊕ L1: [a; b] = [F0 F1]^{-1} F.
  Eigen::MatrixXd basis(2 * n, 2 * n);
  basis.leftCols(n) = l0.frame();
  basis.rightCols(n) = l1.frame();
  const Eigen::MatrixXd ab = basis.partialPivLu().solve(l.frame());
  const Eigen::MatrixXd a = ab.topRows(n);
  const Eigen::MatrixXd b = ab.bottomRows(n);

  // T: L0 -> L1 with graph L, then compose with rho.
  const Eigen::MatrixXd t_coords = a.transpose().partialPivLu().solve(b.transpose()).transpose();
  Eigen::MatrixXd value = rho_coords(l0, l1) * t_coords;
  // Self-adjointness is a theorem for Lagrangian graphs; repair solver noise.
  value = 0.5 * (value + value.transpose());
  return SymOperator(std::move(value));
}

Lagrangian chart_inverse(const Lagrangian& l0, const Lagrangian& l1,
                         const SymOperator& s, const Tolerance& tol) {
  if (l0.n() != l1.n() || s.dim() != l0.n())
    throw DimensionError("chart_inverse: dimension mismatch");
  const double base_gap = transversality_gap(l0, l1);
  if (base_gap < tol.gap_tol) {
    std::ostringstream msg;
    msg << "chart_inverse: base pair not transversal (gap " << base_gap << ")";
    throw ChartDomainError(msg.str(), base_gap);
  }
  // Graph of T = rho^{-1} S over L0 along L1.
  const Eigen::MatrixXd t_coords = rho_coords(l0, l1).partialPivLu().solve(s.matrix());
  const Eigen::MatrixXd span = l0.frame() + l1.frame() * t_coords;
  return Lagrangian(l0.space(), span, tol);
}

Eigen::MatrixXd chart_projection(const Lagrangian& l0, const Lagrangian& l1,
                                 const Lagrangian& l) {
  const Eigen::Index n = l0.n();
  Eigen::MatrixXd basis(2 * n, 2 * n);
  basis.leftCols(n) = l.frame();
  basis.rightCols(n) = l1.frame();
  const Eigen::MatrixXd lm = basis.partialPivLu().solve(l0.frame());
  return lm.topRows(n);
}

PairDefect pair_defect(const Lagrangian& p, const Lagrangian& q,
                       const Tolerance& tol) {
  if (p.n() != q.n()) throw DimensionError("pair_defect: dimension mismatch");
  const Eigen::Index n = p.n();

  PairDefect defect;
  {
    // Principal-angle cosines: singular values of F_p' F_q.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(p.frame().transpose() * q.frame());
    const auto& sv = svd.singularValues();
    defect.intersection_dim =
        static_cast<int>((sv.array() >= 1.0 - tol.gap_tol).count());
  }
  {
    Eigen::MatrixXd stacked(2 * n, 2 * n);
    stacked.leftCols(n) = p.frame();
    stacked.rightCols(n) = q.frame();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(stacked);
    const auto& sv = svd.singularValues();
    const int rank = static_cast<int>((sv.array() > tol.gap_tol).count());
    defect.sum_codim = static_cast<int>(2 * n) - rank;
  }
  return defect;
}

Lagrangian common_transversal(const Lagrangian& p, const Lagrangian& q,
                              std::uint64_t seed, const Tolerance& tol) {
  if (p.n() != q.n())
    throw DimensionError("common_transversal: dimension mismatch");
  const SymplecticSpace space = p.space();

  // Rotation family exp(theta J) applied to J(P); each member is Lagrangian.
  const Eigen::MatrixXd jp = apply_j(p.frame());
  const auto candidate = [&](double theta) {
    Eigen::MatrixXd f = std::cos(theta) * jp + std::sin(theta) * apply_j(jp);
    return Lagrangian(space, f, tol);
  };
  const auto min_gap = [&](const Lagrangian& cand) {
    return std::min(transversality_gap(cand, p), transversality_gap(cand, q));
  };

  // Deterministic grid over one period [0, pi), offset by the seed.
  constexpr int kGrid = 64;
  const double golden = 0.6180339887498949;
  const double offset =
      (std::fmod(static_cast<double>(seed) * golden, 1.0)) * M_PI / kGrid;
  double best_theta = 0.0;
  double best_gap = -1.0;
  for (int i = 0; i < kGrid; ++i) {
    const double theta = offset + M_PI * i / kGrid;
    const double g = min_gap(candidate(theta));
    if (g > best_gap) {
      best_gap = g;
      best_theta = theta;
    }
  }
  // Golden-section refinement around the best grid point.
  double lo = best_theta - M_PI / kGrid;
  double hi = best_theta + M_PI / kGrid;
  for (int iter = 0; iter < 40; ++iter) {
    const double m1 = hi - (hi - lo) * golden;
    const double m2 = lo + (hi - lo) * golden;
    if (min_gap(candidate(m1)) >= min_gap(candidate(m2)))
      hi = m2;
    else
      lo = m1;
  }
  const double theta_star = 0.5 * (lo + hi);
  Lagrangian best = min_gap(candidate(theta_star)) >= best_gap
                        ? candidate(theta_star)
                        : candidate(best_theta);

  const PairDefect dp = pair_defect(best, p, tol);
  const PairDefect dq = pair_defect(best, q, tol);
  if (dp.intersection_dim != 0 || dp.sum_codim != 0 || dq.intersection_dim != 0 ||
      dq.sum_codim != 0) {
    std::ostringstream msg;
    msg << "common_transversal: search exhausted (best min-gap " << min_gap(best)
        << ", defects p=(" << dp.intersection_dim << "," << dp.sum_codim
        << ") q=(" << dq.intersection_dim << "," << dq.sum_codim << "))";
    throw QualityError(msg.str(), min_gap(best));
  }
  return best;
}

Eigen::MatrixXd SpElement::assemble() const {
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd x(2 * n, 2 * n);
  x.topLeftCorner(n, n) = a;
  x.topRightCorner(n, n) = b.matrix();
  x.bottomLeftCorner(n, n) = c.matrix();
  x.bottomRightCorner(n, n) = -a.transpose();
  return x;
}

SpElement SpElement::decompose(const Eigen::MatrixXd& x, double rel_tol) {
  if (x.rows() != x.cols() || x.rows() % 2 != 0)
    throw DimensionError("SpElement::decompose: requires a 2n x 2n matrix");
  const Eigen::Index n = x.rows() / 2;
  const double scale = 1.0 + x.cwiseAbs().maxCoeff();
  const Eigen::MatrixXd a = x.topLeftCorner(n, n);
  const double struct_defect =
      (x.bottomRightCorner(n, n) + a.transpose()).cwiseAbs().maxCoeff();
  const double b_defect =
      (x.topRightCorner(n, n) - x.topRightCorner(n, n).transpose()).cwiseAbs().maxCoeff();
  const double c_defect =
      (x.bottomLeftCorner(n, n) - x.bottomLeftCorner(n, n).transpose()).cwiseAbs().maxCoeff();
  if (struct_defect > rel_tol * scale || b_defect > rel_tol * scale ||
      c_defect > rel_tol * scale) {
    std::ostringstream msg;
    msg << "SpElement::decompose: matrix is not in sp(V) (defects " << struct_defect
        << ", " << b_defect << ", " << c_defect << " at scale " << scale << ")";
    throw PreconditionError(msg.str());
  }
  const Eigen::MatrixXd bsym =
      0.5 * (x.topRightCorner(n, n) + x.topRightCorner(n, n).transpose());
  const Eigen::MatrixXd csym =
      0.5 * (x.bottomLeftCorner(n, n) + x.bottomLeftCorner(n, n).transpose());
  return SpElement{a, SymOperator(bsym), SymOperator(csym)};
}

}  // namespace conjflow
