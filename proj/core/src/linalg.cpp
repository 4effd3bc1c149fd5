#include "conjflow/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace conjflow {

namespace {

double max_abs(const Eigen::MatrixXd& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

}  // namespace

SymOperator::SymOperator(Eigen::MatrixXd entries) {
  if (entries.rows() < 1 || entries.rows() != entries.cols())
    throw DimensionError("SymOperator: requires a square matrix with dim >= 1");
  const double drift = max_abs(entries - entries.transpose());
  const double bound = 1e-12 * (1.0 + max_abs(entries));
  if (drift > bound) {
    std::ostringstream msg;
    msg << "SymOperator: symmetry drift " << drift << " exceeds bound " << bound;
    throw PreconditionError(msg.str());
  }
  mat_ = 0.5 * (entries + entries.transpose());
}

SymOperator SymOperator::Identity(Eigen::Index dim) {
  return SymOperator(Eigen::MatrixXd::Identity(dim, dim));
}

SymOperator SymOperator::Zero(Eigen::Index dim) {
  return SymOperator(Eigen::MatrixXd::Zero(dim, dim));
}

SymOperator SymOperator::Diagonal(const std::vector<double>& diag) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(diag.size()), static_cast<Eigen::Index>(diag.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, i) = diag[static_cast<size_t>(i)];
  return SymOperator(std::move(m));
}

SymOperator SymOperator::operator+(const SymOperator& other) const {
  if (other.dim() != dim()) throw DimensionError("SymOperator: dimension mismatch in +");
  return SymOperator(mat_ + other.mat_);
}

SymOperator SymOperator::operator-(const SymOperator& other) const {
  if (other.dim() != dim()) throw DimensionError("SymOperator: dimension mismatch in -");
  return SymOperator(mat_ - other.mat_);
}

SymOperator SymOperator::scaled(double s) const { return SymOperator(s * mat_); }

EigenSystem eigen_system(const SymOperator& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(s.matrix());
  if (solver.info() != Eigen::Success)
    throw EigensolverError("eigen_system: self-adjoint eigensolver did not converge");
  return EigenSystem{solver.eigenvalues(), solver.eigenvectors()};
}

std::vector<double> spectrum(const SymOperator& s) {
  const EigenSystem es = eigen_system(s);
  return std::vector<double>(es.values.data(), es.values.data() + es.values.size());
}

int morse_index(const SymOperator& s, const Tolerance& tol) {
  tol.validate();
  const EigenSystem es = eigen_system(s);
  return static_cast<int>((es.values.array() < -tol.kernel_tol).count());
}

int kernel_dim(const SymOperator& s, const Tolerance& tol) {
  tol.validate();
  const EigenSystem es = eigen_system(s);
  return static_cast<int>((es.values.array().abs() <= tol.kernel_tol).count());
}

bool is_positive_isomorphism(const SymOperator& s, const Tolerance& tol) {
  tol.validate();
  const EigenSystem es = eigen_system(s);
  return es.values(0) >= tol.gap_tol;
}

SymOperator sym_inv_sqrt(const SymOperator& s, const Tolerance& tol) {
  if (!is_positive_isomorphism(s, tol))
    throw PreconditionError(
        "sym_inv_sqrt: operator is not a positive isomorphism at gap_tol");
  const EigenSystem es = eigen_system(s);
  const Eigen::VectorXd inv_sqrt = es.values.array().sqrt().inverse();
  Eigen::MatrixXd r = es.vectors * inv_sqrt.asDiagonal() * es.vectors.transpose();
  SymOperator result{std::move(r)};

  const double cond = es.values(es.values.size() - 1) / es.values(0);
  const Eigen::MatrixXd defect =
      result.matrix() * s.matrix() * result.matrix() -
      Eigen::MatrixXd::Identity(s.dim(), s.dim());
  const double residual = defect.operatorNorm();
  if (residual > 1e-10 * cond)
    throw QualityError("sym_inv_sqrt: residual exceeds 1e-10 * cond", residual);
  return result;
}

ShiftWitnessReport spectral_shift_witness(const SymOperator& t,
                                          const SymOperator& h) {
  if (t.dim() != h.dim())
    throw DimensionError("spectral_shift_witness: dimension mismatch");
  const std::vector<double> spec_t = spectrum(t);
  const std::vector<double> spec_th = spectrum(t + h);
  const std::vector<double> spec_h = spectrum(h);

  ShiftWitnessReport report;
  report.alpha = spec_h.front();
  report.beta = spec_h.back();
  constexpr double slack = 1e-9;
  for (double lambda : spec_t) {
    const double lo = lambda + report.alpha - slack;
    const double hi = lambda + report.beta + slack;
    // Pick the witness closest to the interval midpoint.
    double best = 0.0;
    bool found = false;
    const double mid = 0.5 * (lo + hi);
    for (double mu : spec_th) {
      if (mu < lo || mu > hi) continue;
      if (!found || std::abs(mu - mid) < std::abs(best - mid)) {
        best = mu;
        found = true;
      }
    }
    if (found)
      report.pairs.push_back({lambda, best});
    else
      report.counterexamples.push_back(lambda);
  }
  return report;
}

SpectralSplit spectral_split(const SymOperator& s, const Tolerance& tol) {
  tol.validate();
  const EigenSystem es = eigen_system(s);

  std::vector<double> offenders;
  for (Eigen::Index i = 0; i < es.values.size(); ++i) {
    const double a = std::abs(es.values(i));
    if (a > tol.kernel_tol && a < tol.gap_tol) offenders.push_back(es.values(i));
  }
  if (!offenders.empty()) {
    std::ostringstream msg;
    msg << "spectral_split: " << offenders.size()
        << " eigenvalue(s) in the dead zone (" << tol.kernel_tol << ", "
        << tol.gap_tol << ")";
    throw AmbiguousSplitError(msg.str(), offenders);
  }

  const Eigen::Index n = s.dim();
  Eigen::MatrixXd p_pos = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd p_ker = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd p_neg = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd v = es.vectors.col(i);
    const Eigen::MatrixXd proj = v * v.transpose();
    if (es.values(i) >= tol.gap_tol)
      p_pos += proj;
    else if (es.values(i) <= -tol.gap_tol)
      p_neg += proj;
    else
      p_ker += proj;
  }
  return SpectralSplit{SymOperator(std::move(p_pos)), SymOperator(std::move(p_ker)),
                       SymOperator(std::move(p_neg))};
}

}  // namespace conjflow
