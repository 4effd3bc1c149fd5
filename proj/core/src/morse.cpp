#include "conjflow/morse.hpp"

#include <cmath>
#include <sstream>

namespace conjflow {

namespace {

// Negative-eigenvalue count of the block-tridiagonal symmetric matrix with
// the given shift applied: inertia of (K - shift G) via the Schur-complement
// recursion S_{i+1} = A_{i+1} - E_i' S_i^{-1} E_i. Throws on a (jittered)
// breakdown, which only happens when shift grazes a pencil eigenvalue.
int shifted_negative_count(const IndexFormDiscretization& d, double shift) {
  const int blocks = d.m - 1;
  double jitter = 0.0;
  for (int attempt = 0; attempt < 5; ++attempt) {
    const double s = shift + jitter;
    int negatives = 0;
    bool breakdown = false;
    Eigen::MatrixXd schur;
    for (int i = 0; i < blocks && !breakdown; ++i) {
      Eigen::MatrixXd a =
          d.k_diag[static_cast<size_t>(i)] - s * d.g_diag[static_cast<size_t>(i)];
      if (i > 0) {
        const Eigen::MatrixXd e = d.k_off[static_cast<size_t>(i) - 1] -
                                  s * d.g_off[static_cast<size_t>(i) - 1];
        a -= e.transpose() * schur.partialPivLu().solve(e);
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
      if (es.info() != Eigen::Success)
        throw EigensolverError("index_of_form: block eigensolver failed");
      const double scale = 1.0 + a.cwiseAbs().maxCoeff();
      for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k) {
        const double lam = es.eigenvalues()(k);
        if (std::abs(lam) < 1e-13 * scale) breakdown = true;
        if (lam < 0.0) ++negatives;
      }
      schur = std::move(a);
    }
    if (!breakdown) return negatives;
    jitter = (jitter == 0.0) ? 1e-3 * std::abs(shift) + 1e-12
                             : 2.0 * jitter;
  }
  throw EigensolverError(
      "index_of_form: factorization breakdown persists under shift jitter");
}

}  // namespace

Eigen::MatrixXd IndexFormDiscretization::dense_g() const {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(dofs(), dofs());
  for (int i = 0; i < m - 1; ++i) {
    g.block(i * n, i * n, n, n) = g_diag[static_cast<size_t>(i)];
    if (i + 1 < m - 1) {
      g.block(i * n, (i + 1) * n, n, n) = g_off[static_cast<size_t>(i)];
      g.block((i + 1) * n, i * n, n, n) = g_off[static_cast<size_t>(i)].transpose();
    }
  }
  return g;
}

Eigen::MatrixXd IndexFormDiscretization::dense_k() const {
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(dofs(), dofs());
  for (int i = 0; i < m - 1; ++i) {
    k.block(i * n, i * n, n, n) = k_diag[static_cast<size_t>(i)];
    if (i + 1 < m - 1) {
      k.block(i * n, (i + 1) * n, n, n) = k_off[static_cast<size_t>(i)];
      k.block((i + 1) * n, i * n, n, n) = k_off[static_cast<size_t>(i)].transpose();
    }
  }
  return k;
}

IndexFormDiscretization discretize(const SymplecticSystemSpec& xr, double t_end,
                                   int m) {
  if (m < 2) throw PreconditionError("discretize: needs at least 2 elements");
  if (!(xr.a < t_end) || t_end > xr.b_eff + 1e-9 * std::max(1.0, xr.b_eff - xr.a))
    throw PreconditionError("discretize: requires a < t_end <= b_eff");
  if (!is_riemannian_system(xr, std::max(1e-3, (t_end - xr.a) / 64.0)))
    throw PreconditionError("discretize: system must be Riemannian");

  IndexFormDiscretization d;
  d.n = xr.n;
  d.m = m;
  d.a = xr.a;
  d.t_end = t_end;
  d.system = std::make_shared<SymplecticSystemSpec>(xr);

  const Eigen::Index n = xr.n;
  const double dt = (t_end - xr.a) / m;
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(n, n);

  d.g_diag.assign(static_cast<size_t>(m - 1), (2.0 / dt) * id);
  d.g_off.assign(static_cast<size_t>(m - 2 > 0 ? m - 2 : 0), (-1.0 / dt) * id);
  d.k_diag.assign(static_cast<size_t>(m - 1), (2.0 / dt) * id);
  d.k_off.assign(static_cast<size_t>(m - 2 > 0 ? m - 2 : 0), (-1.0 / dt) * id);

  // Curvature mass term, 2-point Gauss per element.
  const double offset = 0.5 / std::sqrt(3.0);
  for (int e = 0; e < m; ++e) {
    const double t_left = xr.a + e * dt;
    for (int gp = 0; gp < 2; ++gp) {
      const double u = 0.5 + (gp == 0 ? -offset : offset);  // in (0, 1)
      const double t = t_left + u * dt;
      const Eigen::MatrixXd r = 0.5 * dt * xr.C.eval(t);  // weight * R(t)
      const double phi_l = 1.0 - u;
      const double phi_r = u;
      // Element nodes e (left) and e+1 (right); interior dof index = node - 1.
      if (e >= 1) d.k_diag[static_cast<size_t>(e - 1)] += phi_l * phi_l * r;
      if (e + 1 <= m - 1) d.k_diag[static_cast<size_t>(e)] += phi_r * phi_r * r;
      if (e >= 1 && e + 1 <= m - 1)
        d.k_off[static_cast<size_t>(e - 1)] += phi_l * phi_r * r;
    }
  }
  (void)zero;
  return d;
}

FormIndex index_of_form(const IndexFormDiscretization& d, double nullity_tol) {
  if (!(nullity_tol > 0.0))
    throw PreconditionError("index_of_form: nullity_tol must be positive");
  FormIndex out;
  out.morse_index = shifted_negative_count(d, -nullity_tol);
  const int below_plus = shifted_negative_count(d, nullity_tol);
  out.nullity = below_plus - out.morse_index;

  // Basis independence: recompute the index on a perturbed mesh.
  const IndexFormDiscretization d2 = discretize(*d.system, d.t_end, d.m + 1);
  out.morse_index_perturbed = shifted_negative_count(d2, -nullity_tol);
  out.mesh_stable = out.morse_index_perturbed == out.morse_index;
  return out;
}

std::vector<IndexProfilePoint> index_curve(const SymplecticSystemSpec& xr,
                                           double mesh_density,
                                           const std::vector<double>& t_grid,
                                           double nullity_tol) {
  std::vector<IndexProfilePoint> profile;
  profile.reserve(t_grid.size());
  for (double t : t_grid) {
    const int m =
        std::max(2, static_cast<int>(std::round(mesh_density * (t - xr.a))));
    const FormIndex fi = index_of_form(discretize(xr, t, m), nullity_tol);
    profile.push_back({t, fi.morse_index, fi.nullity});
  }
  return profile;
}

Eigen::VectorXd riesz_of_form(const IndexFormDiscretization& d,
                              const Eigen::VectorXd& v) {
  if (v.size() != d.dofs())
    throw DimensionError("riesz_of_form: dof dimension mismatch");
  const int blocks = d.m - 1;
  const Eigen::Index n = d.n;

  // rhs = Kmat v (block tridiagonal product).
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d.dofs());
  for (int i = 0; i < blocks; ++i) {
    rhs.segment(i * n, n) += d.k_diag[static_cast<size_t>(i)] * v.segment(i * n, n);
    if (i + 1 < blocks) {
      rhs.segment(i * n, n) +=
          d.k_off[static_cast<size_t>(i)] * v.segment((i + 1) * n, n);
      rhs.segment((i + 1) * n, n) +=
          d.k_off[static_cast<size_t>(i)].transpose() * v.segment(i * n, n);
    }
  }

  // Block Thomas solve of G z = rhs (G is SPD block tridiagonal).
  std::vector<Eigen::MatrixXd> diag(static_cast<size_t>(blocks));
  std::vector<Eigen::VectorXd> load(static_cast<size_t>(blocks));
  diag[0] = d.g_diag[0];
  load[0] = rhs.segment(0, n);
  for (int i = 1; i < blocks; ++i) {
    const Eigen::MatrixXd& e = d.g_off[static_cast<size_t>(i) - 1];
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(diag[static_cast<size_t>(i) - 1]);
    diag[static_cast<size_t>(i)] =
        d.g_diag[static_cast<size_t>(i)] - e.transpose() * lu.solve(e);
    load[static_cast<size_t>(i)] =
        rhs.segment(i * n, n) -
        e.transpose() * lu.solve(load[static_cast<size_t>(i) - 1]);
  }
  Eigen::VectorXd z = Eigen::VectorXd::Zero(d.dofs());
  z.segment((blocks - 1) * n, n) =
      diag[static_cast<size_t>(blocks) - 1].partialPivLu().solve(
          load[static_cast<size_t>(blocks) - 1]);
  for (int i = blocks - 2; i >= 0; --i) {
    z.segment(i * n, n) = diag[static_cast<size_t>(i)].partialPivLu().solve(
        load[static_cast<size_t>(i)] -
        d.g_off[static_cast<size_t>(i)] * z.segment((i + 1) * n, n));
  }
  return z;
}

std::vector<Eigen::VectorXd> dof_to_path(const IndexFormDiscretization& d,
                                         const Eigen::VectorXd& v) {
  if (v.size() != d.dofs())
    throw DimensionError("dof_to_path: dof dimension mismatch");
  std::vector<Eigen::VectorXd> path;
  path.reserve(static_cast<size_t>(d.m) + 1);
  path.push_back(Eigen::VectorXd::Zero(d.n));
  for (int i = 0; i < d.m - 1; ++i) path.push_back(v.segment(i * d.n, d.n));
  path.push_back(Eigen::VectorXd::Zero(d.n));
  return path;
}

Eigen::VectorXd image_map(const FundamentalSolution& phi,
                          const std::vector<Eigen::VectorXd>& z_nodes) {
  const int m = phi.steps();
  const Eigen::Index n = phi.system().n;
  if (static_cast<int>(z_nodes.size()) != m + 1)
    throw DimensionError("image_map: z grid does not match the Phi grid");
  for (const Eigen::VectorXd& z : z_nodes)
    if (z.size() != n) throw DimensionError("image_map: z values must be in H");
  if (z_nodes.front().norm() != 0.0 || z_nodes.back().norm() != 0.0)
    throw PreconditionError("image_map: z must vanish at both endpoints");

  const double h = phi.h();
  const auto zdot = [&](int i) -> Eigen::VectorXd {
    if (i == 0) return (-3.0 * z_nodes[0] + 4.0 * z_nodes[1] - z_nodes[2]) / (2.0 * h);
    if (i == m)
      return (3.0 * z_nodes[static_cast<size_t>(m)] -
              4.0 * z_nodes[static_cast<size_t>(m) - 1] +
              z_nodes[static_cast<size_t>(m) - 2]) /
             (2.0 * h);
    return (z_nodes[static_cast<size_t>(i) + 1] - z_nodes[static_cast<size_t>(i) - 1]) /
           (2.0 * h);
  };

  Eigen::VectorXd acc = Eigen::VectorXd::Zero(2 * n);
  for (int i = 0; i <= m; ++i) {
    Eigen::VectorXd lifted = Eigen::VectorXd::Zero(2 * n);
    lifted.head(n) = zdot(i);
    const double weight = (i == 0 || i == m) ? 0.5 : 1.0;
    acc += weight * (phi.inverse_at(phi.a() + i * h) * lifted);
  }
  acc *= h;
  return (phi.node(m) * acc).head(n);
}

}  // namespace conjflow
