#include "conjflow/conjugate.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace conjflow {

namespace {

constexpr double kRootTol = 1e-10;     // |t - t*| for isolated roots
constexpr double kMergeRadius = 1e-8;  // roots closer than this become one instant

std::vector<double> sorted_eigs(const SymOperator& s) { return spectrum(s); }

// Allowed per-node decrease of a sorted branch before the chart is declared
// broken (eigensolver noise scales with the magnitude).
double drop_tolerance(double prev) { return 1e-8 * (1.0 + std::abs(prev)); }

struct BranchRoot {
  double t;
  int branch;
  int window;
};

// Safeguarded Illinois iteration on the k-th sorted eigenvalue of T(t).
// Requires f(lo) < 0 <= f(hi) and a nondecreasing branch.
double solve_branch(const std::function<SymOperator(double)>& T, int k,
                    double lo, double hi, double flo, double fhi) {
  const auto eval = [&](double t) { return sorted_eigs(T(t))[static_cast<size_t>(k)]; };
  int side = 0;
  for (int iter = 0; iter < 200 && hi - lo > kRootTol; ++iter) {
    double mid = (std::abs(fhi - flo) > 1e-300)
                     ? lo - flo * (hi - lo) / (fhi - flo)
                     : 0.5 * (lo + hi);
    const double margin = 0.01 * (hi - lo);
    mid = std::clamp(mid, lo + margin, hi - margin);
    const double fmid = eval(mid);
    if (fmid < 0.0) {
      lo = mid;
      flo = fmid;
      if (side == -1) fhi *= 0.5;  // Illinois weighting
      side = -1;
    } else {
      hi = mid;
      fhi = fmid;
      if (side == 1) flo *= 0.5;
      side = 1;
    }
  }
  return 0.5 * (lo + hi);
}

struct TrackResult {
  std::vector<ConjugateInstant> instants;
  std::vector<std::string> warnings;
};

// Shared root machinery: scans each window's cached branches for sign
// changes, isolates the roots, merges them into instants.
TrackResult track_roots(std::vector<ChartWindow>& windows, const Tolerance& tol) {
  TrackResult result;
  std::vector<BranchRoot> roots;
  for (size_t w = 0; w < windows.size(); ++w) {
    const ChartWindow& win = windows[w];
    if (win.ts.size() < 2) continue;
    const int nbranch = static_cast<int>(win.eigs.front().size());
    for (int k = 0; k < nbranch; ++k) {
      for (size_t j = 0; j + 1 < win.ts.size(); ++j) {
        const double flo = win.eigs[j][static_cast<size_t>(k)];
        const double fhi = win.eigs[j + 1][static_cast<size_t>(k)];
        if (flo < 0.0 && fhi >= 0.0) {
          try {
            const double t =
                solve_branch(win.T, k, win.ts[j], win.ts[j + 1], flo, fhi);
            roots.push_back({t, k, static_cast<int>(w)});
          } catch (const ChartDomainError& e) {
            std::ostringstream msg;
            msg << "root lost to chart breakdown in cell [" << win.ts[j] << ", "
                << win.ts[j + 1] << "] (gap " << e.gap() << ")";
            result.warnings.push_back(msg.str());
          }
        }
      }
    }
  }
  std::sort(roots.begin(), roots.end(),
            [](const BranchRoot& a, const BranchRoot& b) { return a.t < b.t; });

  for (size_t i = 0; i < roots.size();) {
    size_t j = i + 1;
    while (j < roots.size() && roots[j].t - roots[j - 1].t < kMergeRadius) ++j;
    ConjugateInstant instant;
    double tsum = 0.0;
    for (size_t r = i; r < j; ++r) {
      tsum += roots[r].t;
      instant.branches.push_back(roots[r].branch);
    }
    instant.t = tsum / static_cast<double>(j - i);
    instant.multiplicity = static_cast<int>(j - i);
    instant.window = roots[i].window;
    std::sort(instant.branches.begin(), instant.branches.end());

    const ChartWindow& win = windows[static_cast<size_t>(instant.window)];
    const SymOperator t_star = win.T(instant.t);
    instant.kernel_dim_at_t = kernel_dim(t_star, tol);
    for (double lam : sorted_eigs(t_star))
      if (std::abs(lam) < tol.gap_tol) instant.near_zero_profile.push_back(lam);
    const bool kernel_mismatch = instant.kernel_dim_at_t != instant.multiplicity;
    instant.kind = (kernel_mismatch || static_cast<int>(instant.near_zero_profile.size()) >
                                           instant.multiplicity)
                       ? InstantKind::cluster_flagged
                       : InstantKind::monoconjugate;
    if (kernel_mismatch) {
      std::ostringstream msg;
      msg << "kernel_dim " << instant.kernel_dim_at_t << " != branch multiplicity "
          << instant.multiplicity << " at t = " << instant.t;
      result.warnings.push_back(msg.str());
    }
    result.instants.push_back(std::move(instant));
    i = j;
  }
  return result;
}

}  // namespace

ConjugateReport detect(const SymplecticSystemSpec& x, const DetectOptions& options,
                       const Tolerance& tol) {
  tol.validate();
  if (!is_positive_system(x, options.step, tol))
    throw PreconditionError("detect: system is not positive (B(t) must be a "
                            "positive isomorphism)");

  auto phi = std::make_shared<FundamentalSolution>(
      integrate(x, options.step, options.integrate));
  const int m = phi->steps();
  const double h = options.step;
  const Eigen::Index n = x.n;
  const Lagrangian l0 = Lagrangian::vertical(n);

  ConjugateReport report;
  report.a = x.a;
  report.b_eff = x.b_eff;
  report.step = h;
  report.seed = options.seed;
  report.quality.symplectic_drift = phi->drift();

  std::uint64_t window_count = 0;
  const auto make_window = [&](int anchor_node) {
    ChartWindow win;
    win.t0 = x.a + anchor_node * h;
    const Lagrangian base = lagrangian_curve(*phi, win.t0);
    win.companion = common_transversal(l0, base, options.seed + window_count, tol);
    ++window_count;
    const Lagrangian companion = *win.companion;
    win.T = [phi, l0, companion, tol](double t) {
      return chart(l0, companion, lagrangian_curve(*phi, t), tol).scaled(-1.0);
    };
    return win;
  };

  std::vector<ChartWindow> windows;
  ChartWindow cur = make_window(0);
  const auto push_node = [&](ChartWindow& win, int i, const SymOperator& t_i,
                             double gap) {
    win.ts.push_back(x.a + i * h);
    win.eigs.push_back(sorted_eigs(t_i));
    win.min_gap = std::min(win.min_gap, gap);
    report.quality.min_transversality_gap =
        std::min(report.quality.min_transversality_gap, gap);
  };
  {
    const double gap0 = transversality_gap(lagrangian_curve(*phi, x.a), *cur.companion);
    push_node(cur, 0, cur.T(x.a), gap0);
  }

  int i = 1;
  while (i <= m) {
    const double t = x.a + i * h;
    const Lagrangian xi = lagrangian_curve(*phi, t);
    const double gap = transversality_gap(xi, *cur.companion);
    bool trigger = gap < 2.0 * tol.gap_tol;
    SymOperator t_i = SymOperator::Zero(1);
    if (!trigger) {
      try {
        t_i = chart(l0, *cur.companion, xi, tol).scaled(-1.0);
      } catch (const ChartDomainError&) {
        trigger = true;
      }
    }
    if (!trigger) {
      const std::vector<double> eigs = sorted_eigs(t_i);
      const std::vector<double>& prev = cur.eigs.back();
      for (size_t k = 0; k < eigs.size(); ++k) {
        if (eigs[k] < prev[k] - drop_tolerance(prev[k])) {
          trigger = true;
          break;
        }
      }
      if (!trigger) {
        cur.ts.push_back(t);
        cur.eigs.push_back(eigs);
        cur.min_gap = std::min(cur.min_gap, gap);
        report.quality.min_transversality_gap =
            std::min(report.quality.min_transversality_gap, gap);
        ++i;
        continue;
      }
    }
    // Re-anchor at the previous node. If this window was just anchored there,
    // accept the node with a diagnostic instead of thrashing.
    if (cur.ts.size() == 1) {
      std::ostringstream msg;
      msg << "branch-sorting ambiguity at t = " << t
          << " (chart stress immediately after re-anchor); merged branches";
      report.quality.warnings.push_back(msg.str());
      try {
        SymOperator forced = cur.T(t);
        push_node(cur, i, forced, gap);
      } catch (const ChartDomainError& e) {
        std::ostringstream skip;
        skip << "node t = " << t << " skipped, chart undefined (gap " << e.gap()
             << ")";
        report.quality.warnings.push_back(skip.str());
      }
      ++i;
      continue;
    }
    cur.t_lo = cur.ts.front();
    cur.t_hi = cur.ts.back();
    windows.push_back(std::move(cur));
    cur = make_window(i - 1);
    const double gap_prev =
        transversality_gap(lagrangian_curve(*phi, x.a + (i - 1) * h), *cur.companion);
    push_node(cur, i - 1, cur.T(x.a + (i - 1) * h), gap_prev);
  }
  cur.t_lo = cur.ts.front();
  cur.t_hi = cur.ts.back();
  windows.push_back(std::move(cur));

  TrackResult tracked = track_roots(windows, tol);
  report.windows = std::move(windows);
  report.instants = std::move(tracked.instants);
  for (auto& w : tracked.warnings) report.quality.warnings.push_back(std::move(w));

  // Cross-validate multiplicities against the kernel of (t - a) E_t.
  const double e_threshold = std::sqrt(tol.kernel_tol * tol.gap_tol);
  for (ConjugateInstant& instant : report.instants) {
    const Eigen::MatrixXd e_scaled = phi->at(instant.t).topRightCorner(n, n);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(e_scaled);
    const auto& sv = svd.singularValues();
    const double cutoff = e_threshold * (1.0 + sv(0));
    instant.e_kernel_dim = static_cast<int>((sv.array() <= cutoff).count());
    if (instant.e_kernel_dim != instant.multiplicity) {
      std::ostringstream msg;
      msg << "E_t kernel " << instant.e_kernel_dim << " != multiplicity "
          << instant.multiplicity << " at t = " << instant.t;
      report.quality.warnings.push_back(msg.str());
    }
  }

  // Remark-5.12 guard: no instants immediately after a.
  const std::vector<double> b_eigs = spectrum(SymOperator(x.B.eval(x.a)));
  double c_norm = 0.0;
  const int c_samples = std::min(m, 256);
  for (int s = 0; s <= c_samples; ++s) {
    const double t = x.a + (x.b_eff - x.a) * s / std::max(1, c_samples);
    const std::vector<double> ce = spectrum(SymOperator(x.C.eval(t)));
    c_norm = std::max({c_norm, std::abs(ce.front()), std::abs(ce.back())});
  }
  report.quality.delta_guard =
      c_norm < 1e-12 ? (x.b_eff - x.a)
                     : std::min(b_eigs.front() / (4.0 * c_norm), x.b_eff - x.a);
  for (const ConjugateInstant& instant : report.instants)
    if (instant.t < x.a + report.quality.delta_guard)
      report.quality.guard_violated = true;

  return report;
}

ConjugateReport detect_path(std::shared_ptr<const OperatorPath> path, double a,
                            double b_eff, const DetectOptions& options,
                            const Tolerance& tol) {
  tol.validate();
  if (!path) throw PreconditionError("detect_path: null path");
  const double h = options.step;
  const double span = b_eff - a;
  const int m = static_cast<int>(std::round(span / h));
  if (m < 1 || std::abs(m * h - span) > 1e-9 * std::max(1.0, span))
    throw PreconditionError("detect_path: (b_eff - a) / h must be integral");
  for (int s = 0; s <= 4; ++s) {
    const double t = a + span * s / 4.0;
    if (!is_positive_isomorphism(path->derivative(t), tol))
      throw PreconditionError("detect_path: T'(t) is not a positive isomorphism");
  }

  ConjugateReport report;
  report.a = a;
  report.b_eff = b_eff;
  report.step = h;
  report.seed = options.seed;

  ChartWindow win;
  win.t0 = a;
  win.T = [path](double t) { return path->at(t); };
  for (int i = 0; i <= m; ++i) {
    const double t = a + i * h;
    win.ts.push_back(t);
    win.eigs.push_back(sorted_eigs(path->at(t)));
  }
  win.t_lo = a;
  win.t_hi = a + m * h;
  win.min_gap = std::numeric_limits<double>::infinity();
  std::vector<ChartWindow> windows;
  windows.push_back(std::move(win));

  TrackResult tracked = track_roots(windows, tol);
  report.windows = std::move(windows);
  report.instants = std::move(tracked.instants);
  for (auto& w : tracked.warnings) report.quality.warnings.push_back(std::move(w));
  report.quality.delta_guard = 0.0;
  report.quality.min_transversality_gap =
      std::numeric_limits<double>::quiet_NaN();
  return report;
}

MorseFlowResult morse_flow(const ConjugateReport& report, const Tolerance& tol) {
  MorseFlowResult result;
  for (const ChartWindow& win : report.windows) {
    std::vector<int> profile;
    profile.reserve(win.eigs.size());
    for (const std::vector<double>& eigs : win.eigs) {
      int idx = 0;
      for (double lam : eigs)
        if (lam < -tol.kernel_tol) ++idx;
      profile.push_back(idx);
    }
    result.window_index_profiles.push_back(std::move(profile));
  }

  for (const ConjugateInstant& instant : report.instants) {
    const ChartWindow& win = report.windows.at(static_cast<size_t>(instant.window));
    double delta = 10.0 * report.step;
    delta = std::min({delta, instant.t - win.t_lo, win.t_hi - instant.t});
    if (!(delta > 0.0)) delta = std::min(10.0 * report.step, 0.5 * report.step);

    MorseJump jump;
    jump.t = instant.t;
    jump.delta = delta;
    jump.index_before = morse_index(win.T(instant.t - delta), tol);
    jump.index_at = morse_index(win.T(instant.t), tol);
    jump.index_after = morse_index(win.T(instant.t + delta), tol);
    jump.kernel = kernel_dim(win.T(instant.t), tol);
    jump.jump = jump.index_before - jump.index_after;
    jump.law_ok = (jump.index_after == jump.index_at) &&
                  (jump.index_before == jump.index_at + jump.kernel);
    result.jumps.push_back(jump);
  }
  return result;
}

bool isolation_check(const ConjugateReport& report, const Tolerance& tol) {
  for (size_t i = 0; i < report.instants.size(); ++i) {
    const ConjugateInstant& instant = report.instants[i];
    double radius = 2.0 * report.step;
    if (i > 0)
      radius = std::min(radius, 0.45 * (instant.t - report.instants[i - 1].t));
    if (i + 1 < report.instants.size())
      radius = std::min(radius, 0.45 * (report.instants[i + 1].t - instant.t));
    const ChartWindow& win = report.windows.at(static_cast<size_t>(instant.window));
    for (double r : {radius, 0.5 * radius}) {
      for (double t : {instant.t - r, instant.t + r}) {
        if (t <= report.a || t >= report.b_eff) continue;
        if (t < win.t_lo || t > win.t_hi) continue;
        const std::vector<double> eigs = sorted_eigs(win.T(t));
        double min_abs = std::numeric_limits<double>::infinity();
        for (double lam : eigs) min_abs = std::min(min_abs, std::abs(lam));
        if (min_abs < tol.kernel_tol) return false;
      }
    }
  }
  return true;
}

TruncationStudy truncation_study(
    const std::function<SymplecticSystemSpec(int)>& family,
    const std::vector<int>& dims, const std::vector<double>& probes,
    const std::vector<double>& eps_grid, const DetectOptions& options,
    const Tolerance& tol) {
  for (size_t i = 1; i < dims.size(); ++i)
    if (dims[i] <= dims[i - 1])
      throw PreconditionError("truncation_study: dims must be strictly increasing");

  TruncationStudy study;
  study.dims = dims;
  study.probe_instants = probes;
  study.eps_grid = eps_grid;

  for (int dim : dims) {
    const SymplecticSystemSpec x = family(dim);
    if (study.probe_window_width == 0.0)
      study.probe_window_width = 0.25 * (x.b_eff - x.a);

    TruncationEntry entry;
    entry.dim = dim;
    entry.report = detect(x, options, tol);

    const Lagrangian l0 = Lagrangian::vertical(x.n);
    std::optional<FundamentalSolution> phi_probe;
    if (!x.prescribed && !probes.empty())
      phi_probe = integrate(x, options.step, options.integrate);
    for (double p : probes) {
      TruncationProbe probe;
      probe.t = p;
      SymOperator t_probe = SymOperator::Zero(1);
      if (x.prescribed) {
        t_probe = x.prescribed->at(p);
      } else if (p > x.a && p < x.b_eff) {
        const Lagrangian base = lagrangian_curve(*phi_probe, p);
        const Lagrangian companion = common_transversal(l0, base, options.seed, tol);
        t_probe = chart(l0, companion, base, tol).scaled(-1.0);
      } else {
        throw PreconditionError(
            "truncation_study: probe outside [a, b_eff] needs a prescribed curve");
      }
      const std::vector<double> eigs = sorted_eigs(t_probe);
      for (double eps : eps_grid) {
        int count = 0;
        for (double lam : eigs)
          if (std::abs(lam) < eps) ++count;
        probe.near_zero_counts.push_back(count);
      }
      // Gap diagnostics among instants below the probe.
      std::vector<double> below;
      for (const ConjugateInstant& inst : entry.report.instants)
        if (inst.t <= p + 1e-12) below.push_back(inst.t);
      if (below.size() >= 2)
        probe.last_gap = below.back() - below[below.size() - 2];
      double max_gap = std::numeric_limits<double>::quiet_NaN();
      for (size_t k = 1; k < below.size(); ++k) {
        if (below[k - 1] < p - study.probe_window_width) continue;
        const double gap = below[k] - below[k - 1];
        if (std::isnan(max_gap) || gap > max_gap) max_gap = gap;
      }
      probe.max_gap_in_window = max_gap;
      entry.probes.push_back(std::move(probe));
    }
    study.entries.push_back(std::move(entry));
  }
  return study;
}

double fit_decay_exponent(const std::vector<double>& x,
                          const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw PreconditionError("fit_decay_exponent: needs matching samples (>= 2)");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace conjflow
