// symplectic.hpp — the symplectic space V = H ⊕ H, Lagrangian frames, the
// chart atlas phi_{L0,L1}, and block decompositions of sp(V).
//
// Conventions: J(x, y) = (-y, x), i.e. J = [[0, -I], [I, 0]] in block form,
// omega(u, v) = <J u, v>. L0 = {0} ⊕ H (frame [0; I]), L1 = H ⊕ {0}
// (frame [I; 0]). Lagrangians always carry orthonormal frames; every
// construction re-orthonormalizes. Observable quantities (charts, defects,
// singular values) are frame-gauge invariant.

#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "conjflow/linalg.hpp"

namespace conjflow {

struct SymplecticSpace {
  Eigen::Index n = 0;  // dim H; dim V = 2n

  Eigen::MatrixXd J() const;
  Eigen::Index dim() const { return 2 * n; }
};

// omega(u, v) = <J u, v>. Bilinear, antisymmetric.
double omega(const SymplecticSpace& space, const Eigen::VectorXd& u,
             const Eigen::VectorXd& v);

// Orthonormalize the columns of a full-rank 2n x k matrix (QR with positive
// diagonal, so already-orthonormal frames pass through unchanged).
Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& frame);

// Frame test: columns orthonormal and the span isotropic, both at tol.
bool is_lagrangian(const Eigen::MatrixXd& frame, const Tolerance& tol);

class Lagrangian {
 public:
  // Orthonormalizes `span` and validates isotropy (frame' J frame = 0).
  Lagrangian(const SymplecticSpace& space, const Eigen::MatrixXd& span,
             const Tolerance& tol = Tolerance{});

  // L0 = {0} ⊕ H, frame [0; I].
  static Lagrangian vertical(Eigen::Index n);
  // L1 = H ⊕ {0}, frame [I; 0].
  static Lagrangian horizontal(Eigen::Index n);

  const SymplecticSpace& space() const { return space_; }
  Eigen::Index n() const { return space_.n; }
  const Eigen::MatrixXd& frame() const { return frame_; }

 private:
  Lagrangian(const SymplecticSpace& space, Eigen::MatrixXd frame, int);
  SymplecticSpace space_;
  Eigen::MatrixXd frame_;  // 2n x n, orthonormal columns
};

// Smallest singular value of [P.frame | Q.frame]; zero iff the pair fails to
// span V. The single transversality knob shared with Tolerance::gap_tol.
double transversality_gap(const Lagrangian& p, const Lagrangian& q);

// phi_{L0,L1}(L) = rho_{L1,L0} T, where T: L0 -> L1 has graph L and
// rho_{L1,L0} = P_{L0} J|_{L1}. Returned in l0-frame coordinates.
// Requires V = L ⊕ L1 and V = L0 ⊕ L1 at tol.gap_tol (ChartDomainError
// carries the offending singular value otherwise).
SymOperator chart(const Lagrangian& l0, const Lagrangian& l1,
                  const Lagrangian& l, const Tolerance& tol = Tolerance{});

// Inverse of the same chart: the Lagrangian with chart(l0, l1, .) = s.
Lagrangian chart_inverse(const Lagrangian& l0, const Lagrangian& l1,
                         const SymOperator& s, const Tolerance& tol = Tolerance{});

// Coordinate matrix (in the frame bases) of the isomorphism eta: L0 -> L
// given by restricting the projection L ⊕ L1 -> L to L0. This is the
// congruence factor of the chart differential dphi_{L0,L1}(L) . H = eta* H eta.
Eigen::MatrixXd chart_projection(const Lagrangian& l0, const Lagrangian& l1,
                                 const Lagrangian& l);

// intersection_dim = dim(P ∩ Q) via principal angles of the frame Gram;
// sum_codim = 2n - rank[P | Q]. Equal for Lagrangian pairs.
struct PairDefect {
  int intersection_dim = 0;
  int sum_codim = 0;
};
PairDefect pair_defect(const Lagrangian& p, const Lagrangian& q,
                       const Tolerance& tol = Tolerance{});

// A Lagrangian transversal to both p and q: searches the rotation family
// exp(theta J) J(p) over a deterministic seed-offset theta grid, maximizing
// the smaller of the two transversality gaps, then refines locally.
Lagrangian common_transversal(const Lagrangian& p, const Lagrangian& q,
                              std::uint64_t seed,
                              const Tolerance& tol = Tolerance{});

// Element of sp(V) in block form X = [[A, B], [C, -A']], B and C symmetric.
struct SpElement {
  Eigen::MatrixXd a;
  SymOperator b;
  SymOperator c;

  Eigen::MatrixXd assemble() const;
  // Splits a 2n x 2n matrix; validates the sp(V) block structure at tol
  // (relative to the matrix scale).
  static SpElement decompose(const Eigen::MatrixXd& x, double rel_tol = 1e-8);
};

}  // namespace conjflow
