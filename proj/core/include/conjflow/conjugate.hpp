// conjugate.hpp — detection, classification and multiplicity accounting of
// conjugate instants; Morse-index flow of operator paths; truncation-family
// studies for the accumulation surrogate.
//
// The detector partitions [a, b_eff) into chart windows. Within a window the
// curve T(t) = -chart(L0, L1, xi(t)) has positive-definite derivative, so its
// sorted eigenvalue branches are nondecreasing and each crosses zero at most
// once; sign changes are isolated by a safeguarded root finder to 1e-10 in t.
// Windows re-anchor when the companion's transversality gap decays below
// 2 * gap_tol or a sorted branch decreases (chart breakdown between nodes).

#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <string>

#include "conjflow/system.hpp"

namespace conjflow {

struct DetectOptions {
  double step = 1e-3;
  std::uint64_t seed = 0;
  IntegrateOptions integrate;
};

struct ChartWindow {
  double t_lo = 0.0;
  double t_hi = 0.0;
  double t0 = 0.0;  // anchor instant of the companion
  std::optional<Lagrangian> companion;
  std::vector<double> ts;                 // cached grid nodes
  std::vector<std::vector<double>> eigs;  // sorted eigenvalues of T per node
  std::function<SymOperator(double)> T;   // evaluator, valid on [t_lo, t_hi]
  double min_gap = std::numeric_limits<double>::infinity();
};

enum class InstantKind { monoconjugate, cluster_flagged };

struct ConjugateInstant {
  double t = 0.0;
  int multiplicity = 0;       // number of vanishing eigenvalue branches
  std::vector<int> branches;  // indices of the vanishing sorted branches
  InstantKind kind = InstantKind::monoconjugate;
  std::vector<double> near_zero_profile;  // eigenvalues in (-gap_tol, gap_tol)
  int kernel_dim_at_t = 0;                // kernel_dim(T(t)) cross-check
  int e_kernel_dim = -1;  // kernel of (t-a) E_t; -1 when no system backs the path
  int window = 0;         // index into ConjugateReport::windows
  // Construct-pipeline provenance (empty outside full_pipeline reports).
  std::string provenance;
  double prescribed_value = std::numeric_limits<double>::quiet_NaN();
};

struct ReportQuality {
  double symplectic_drift = 0.0;
  double min_transversality_gap = std::numeric_limits<double>::infinity();
  double delta_guard = 0.0;
  bool guard_violated = false;
  std::vector<std::string> warnings;
};

struct ConjugateReport {
  double a = 0.0;
  double b_eff = 0.0;
  double step = 0.0;
  std::uint64_t seed = 0;
  std::vector<ConjugateInstant> instants;  // strictly increasing in t
  std::vector<ChartWindow> windows;
  ReportQuality quality;
};

// Detector for a positive symplectic system.
ConjugateReport detect(const SymplecticSystemSpec& x, const DetectOptions& options,
                       const Tolerance& tol);

// Detector for a directly-given operator path with positive derivative
// (single global window, no chart machinery). The report's window evaluator
// shares ownership of the path.
ConjugateReport detect_path(std::shared_ptr<const OperatorPath> path, double a,
                            double b_eff, const DetectOptions& options,
                            const Tolerance& tol);

// Morse-index flow along the report's windows. At every instant verifies
// index(t*-d) = index(t*) + kernel_dim(T(t*)) and index(t*+d) = index(t*)
// with d = 10 * grid step (clamped into the window).
struct MorseJump {
  double t = 0.0;
  int jump = 0;  // index(t*-d) - index(t*+d)
  int index_before = 0;
  int index_at = 0;
  int index_after = 0;
  int kernel = 0;
  double delta = 0.0;
  bool law_ok = false;
};
struct MorseFlowResult {
  std::vector<MorseJump> jumps;
  // Morse index at every cached node, per window (chart-dependent offsets
  // across windows; jumps are chart-invariant).
  std::vector<std::vector<int>> window_index_profiles;
};
MorseFlowResult morse_flow(const ConjugateReport& report, const Tolerance& tol);

// True iff every instant has a punctured neighborhood (radius capped by two
// grid steps and by half the distance to its neighbors) on which T stays
// invertible at kernel_tol.
bool isolation_check(const ConjugateReport& report, const Tolerance& tol);

// Truncation-family study: per-dimension reports plus accumulation
// diagnostics at probe instants.
struct TruncationProbe {
  double t = 0.0;
  std::vector<int> near_zero_counts;  // per eps in eps_grid
  double last_gap = std::numeric_limits<double>::quiet_NaN();
  double max_gap_in_window = std::numeric_limits<double>::quiet_NaN();
};
struct TruncationEntry {
  int dim = 0;
  ConjugateReport report;
  std::vector<TruncationProbe> probes;
};
struct TruncationStudy {
  std::vector<int> dims;
  std::vector<double> probe_instants;
  std::vector<double> eps_grid;
  double probe_window_width = 0.0;
  std::vector<TruncationEntry> entries;
};
TruncationStudy truncation_study(
    const std::function<SymplecticSystemSpec(int)>& family,
    const std::vector<int>& dims, const std::vector<double>& probes,
    const std::vector<double>& eps_grid, const DetectOptions& options,
    const Tolerance& tol);

// Least-squares slope of log(y) against log(x); the study's observed decay
// exponent (no rate is asserted, only measured).
double fit_decay_exponent(const std::vector<double>& x,
                          const std::vector<double>& y);

}  // namespace conjflow
