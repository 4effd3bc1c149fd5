#include "conjflow/scenario.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace conjflow {

namespace {

[[noreturn]] void schema_fail(const std::string& path, const std::string& msg) {
  throw SchemaError(path, msg);
}

const Json* find(const Json& j, const std::string& key) {
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

double require_finite_number(const Json& j, const std::string& path) {
  if (!j.is_number()) schema_fail(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) schema_fail(path, "must be finite");
  return v;
}

double get_number(const Json& parent, const std::string& key,
                  const std::string& path, std::optional<double> fallback = {}) {
  const Json* j = find(parent, key);
  if (!j) {
    if (fallback) return *fallback;
    schema_fail(path, "missing required field");
  }
  return require_finite_number(*j, path);
}

Eigen::MatrixXd parse_matrix(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) schema_fail(path, "expected a non-empty array of rows");
  const size_t rows = j.size();
  size_t cols = 0;
  Eigen::MatrixXd m;
  for (size_t r = 0; r < rows; ++r) {
    const Json& row = j[r];
    if (!row.is_array() || row.empty())
      schema_fail(path + "[" + std::to_string(r) + "]", "expected a non-empty row");
    if (r == 0) {
      cols = row.size();
      m.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    } else if (row.size() != cols) {
      schema_fail(path + "[" + std::to_string(r) + "]", "ragged matrix rows");
    }
    for (size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          require_finite_number(row[c], path + "[" + std::to_string(r) + "][" +
                                            std::to_string(c) + "]");
  }
  return m;
}

ComponentCurve parse_component(const Json& j, Eigen::Index n,
                               const std::string& path) {
  if (!j.is_object()) schema_fail(path, "expected a component object");
  const Json* type = find(j, "type");
  if (!type || !type->is_string()) schema_fail(path + ".type", "missing component type");
  const std::string kind = type->get<std::string>();

  if (kind == "zero") return ComponentCurve::constant(Eigen::MatrixXd::Zero(n, n));
  if (kind == "identity")
    return ComponentCurve::constant(Eigen::MatrixXd::Identity(n, n));
  if (kind == "scaled_identity") {
    const double s = get_number(j, "scale", path + ".scale");
    return ComponentCurve::constant(s * Eigen::MatrixXd::Identity(n, n));
  }
  if (kind == "constant") {
    const Json* v = find(j, "value");
    if (!v) schema_fail(path + ".value", "missing required field");
    Eigen::MatrixXd m = parse_matrix(*v, path + ".value");
    if (m.rows() != n || m.cols() != n) schema_fail(path + ".value", "must be n x n");
    return ComponentCurve::constant(std::move(m));
  }
  if (kind == "polynomial") {
    const Json* cs = find(j, "coeffs");
    if (!cs || !cs->is_array() || cs->empty())
      schema_fail(path + ".coeffs", "expected a non-empty array of matrices");
    std::vector<Eigen::MatrixXd> coeffs;
    for (size_t i = 0; i < cs->size(); ++i) {
      Eigen::MatrixXd m =
          parse_matrix((*cs)[i], path + ".coeffs[" + std::to_string(i) + "]");
      if (m.rows() != n || m.cols() != n)
        schema_fail(path + ".coeffs[" + std::to_string(i) + "]", "must be n x n");
      coeffs.push_back(std::move(m));
    }
    return ComponentCurve::polynomial(std::move(coeffs));
  }
  if (kind == "diagonal_profile") {
    const Json* es = find(j, "entries");
    if (!es || !es->is_array() || es->size() != static_cast<size_t>(n))
      schema_fail(path + ".entries", "expected n per-entry coefficient arrays");
    std::vector<std::vector<double>> entries;
    for (size_t k = 0; k < es->size(); ++k) {
      const Json& row = (*es)[k];
      if (!row.is_array() || row.empty())
        schema_fail(path + ".entries[" + std::to_string(k) + "]",
                    "expected a non-empty coefficient array");
      std::vector<double> cs;
      for (size_t i = 0; i < row.size(); ++i)
        cs.push_back(require_finite_number(
            row[i], path + ".entries[" + std::to_string(k) + "][" +
                        std::to_string(i) + "]"));
      entries.push_back(std::move(cs));
    }
    return ComponentCurve::diagonal_profile(std::move(entries));
  }
  schema_fail(path + ".type", "unknown component type '" + kind + "'");
}

SymplecticSystemSpec parse_system(const Json& j, const std::string& path) {
  if (!j.is_object()) schema_fail(path, "expected a system object");
  const Json* nj = find(j, "n");
  if (!nj || !nj->is_number_integer() || nj->get<int>() < 1)
    schema_fail(path + ".n", "expected a positive integer");
  const Eigen::Index n = nj->get<Eigen::Index>();

  const Json* iv = find(j, "interval");
  if (!iv) schema_fail(path + ".interval", "missing required field");
  const double a = get_number(*iv, "a", path + ".interval.a");
  const double b = get_number(*iv, "b", path + ".interval.b");
  if (!(a < b)) schema_fail(path + ".interval", "requires a < b");

  SymplecticSystemSpec spec;
  spec.n = n;
  spec.a = a;
  spec.b_eff = b;

  if (const Json* preset = find(j, "preset")) {
    const Json* name = find(*preset, "name");
    if (!name || !name->is_string())
      schema_fail(path + ".preset.name", "missing preset name");
    const std::string id = name->get<std::string>();
    spec.A = ComponentCurve::constant(Eigen::MatrixXd::Zero(n, n));
    spec.B = ComponentCurve::constant(Eigen::MatrixXd::Identity(n, n));
    if (id == "flat") {
      spec.C = ComponentCurve::constant(Eigen::MatrixXd::Zero(n, n));
    } else if (id == "riemannian_constant_curvature") {
      const double kappa = get_number(*preset, "kappa", path + ".preset.kappa");
      spec.C = ComponentCurve::constant(-kappa * Eigen::MatrixXd::Identity(n, n));
    } else {
      schema_fail(path + ".preset.name", "unknown system preset '" + id + "'");
    }
    return spec;
  }

  const Json* comps = find(j, "components");
  if (!comps) schema_fail(path + ".components", "missing components or preset");
  const Json* aj = find(*comps, "A");
  const Json* bj = find(*comps, "B");
  const Json* cj = find(*comps, "C");
  if (!aj) schema_fail(path + ".components.A", "missing required field");
  if (!bj) schema_fail(path + ".components.B", "missing required field");
  if (!cj) schema_fail(path + ".components.C", "missing required field");
  spec.A = parse_component(*aj, n, path + ".components.A");
  spec.B = parse_component(*bj, n, path + ".components.B");
  spec.C = parse_component(*cj, n, path + ".components.C");
  return spec;
}

SingularityPrescription parse_prescription(const Json& j, const std::string& path) {
  if (!j.is_object()) schema_fail(path, "expected a prescription object");
  SingularityPrescription p;

  const Json* iv = find(j, "interval");
  if (!iv) schema_fail(path + ".interval", "missing required field");
  p.c = get_number(*iv, "c", path + ".interval.c");
  const Json* bj = find(*iv, "b");
  if (!bj) schema_fail(path + ".interval.b", "missing required field");
  if (bj->is_string()) {
    if (bj->get<std::string>() != "inf")
      schema_fail(path + ".interval.b", "expected a number or \"inf\"");
    p.b_infinite = true;
  } else {
    p.b = require_finite_number(*bj, path + ".interval.b");
  }

  if (const Json* pts = find(j, "points")) {
    if (!pts->is_array()) schema_fail(path + ".points", "expected an array");
    for (size_t i = 0; i < pts->size(); ++i) {
      const std::string ppath = path + ".points[" + std::to_string(i) + "]";
      const Json& pj = (*pts)[i];
      PrescribedPoint pt;
      pt.t = get_number(pj, "t", ppath + ".t");
      const Json* mj = find(pj, "multiplicity");
      if (!mj) {
        pt.multiplicity = 1;
      } else if (mj->is_string()) {
        if (mj->get<std::string>() != "inf")
          schema_fail(ppath + ".multiplicity", "expected an integer or \"inf\"");
        pt.multiplicity = kInfiniteMultiplicity;
      } else if (mj->is_number_integer() && mj->get<int>() >= 1) {
        pt.multiplicity = mj->get<unsigned>();
      } else {
        schema_fail(ppath + ".multiplicity", "expected a positive integer or \"inf\"");
      }
      p.points.push_back(pt);
    }
  }
  if (const Json* ivs = find(j, "intervals")) {
    if (!ivs->is_array()) schema_fail(path + ".intervals", "expected an array");
    for (size_t i = 0; i < ivs->size(); ++i) {
      const std::string ipath = path + ".intervals[" + std::to_string(i) + "]";
      PrescribedInterval piv;
      piv.lo = get_number((*ivs)[i], "lo", ipath + ".lo");
      piv.hi = get_number((*ivs)[i], "hi", ipath + ".hi");
      p.intervals.push_back(piv);
    }
  }
  if (const Json* budget = find(j, "budget")) {
    if (!budget->is_number_integer() || budget->get<int>() < 1)
      schema_fail(path + ".budget", "expected a positive integer");
    p.budget = budget->get<int>();
  }
  if (const Json* cap = find(j, "cap")) {
    if (!cap->is_number_integer() || cap->get<int>() < 1)
      schema_fail(path + ".cap", "expected a positive integer");
    p.inf_cap = cap->get<unsigned>();
  }
  p.density = get_number(j, "density", path + ".density", 32.0);
  if (!(p.density > 0.0)) schema_fail(path + ".density", "must be positive");

  try {
    p.validate();
  } catch (const PreconditionError& e) {
    schema_fail(path, e.what());
  }
  return p;
}

std::vector<double> parse_number_array(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) schema_fail(path, "expected a non-empty array");
  std::vector<double> out;
  for (size_t i = 0; i < j.size(); ++i)
    out.push_back(require_finite_number(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

}  // namespace

Scenario parse_scenario(const Json& document) {
  if (!document.is_object()) schema_fail("$", "scenario must be a JSON object");

  Scenario s;
  s.echo = document;

  if (const Json* sv = find(document, "schema_version")) {
    if (!sv->is_number_integer() || sv->get<int>() != kSchemaVersion)
      schema_fail("schema_version", "unsupported schema version");
  }
  const Json* kind = find(document, "kind");
  if (!kind || !kind->is_string()) schema_fail("kind", "missing scenario kind");
  const std::string k = kind->get<std::string>();
  if (k == "system")
    s.kind = ScenarioKind::system;
  else if (k == "morse")
    s.kind = ScenarioKind::morse;
  else if (k == "prescription")
    s.kind = ScenarioKind::prescription;
  else if (k == "roundtrip")
    s.kind = ScenarioKind::roundtrip;
  else if (k == "truncation_family")
    s.kind = ScenarioKind::truncation_family;
  else
    schema_fail("kind", "unknown scenario kind '" + k + "'");

  if (const Json* name = find(document, "name")) {
    if (!name->is_string()) schema_fail("name", "expected a string");
    s.name = name->get<std::string>();
  }
  if (const Json* grid = find(document, "grid")) {
    s.step = get_number(*grid, "step", "grid.step");
    if (!(s.step > 0.0)) schema_fail("grid.step", "must be positive");
  }
  if (const Json* tols = find(document, "tolerances")) {
    s.tol.kernel_tol = get_number(*tols, "kernel_tol", "tolerances.kernel_tol",
                                  s.tol.kernel_tol);
    s.tol.gap_tol = get_number(*tols, "gap_tol", "tolerances.gap_tol", s.tol.gap_tol);
    try {
      s.tol.validate();
    } catch (const PreconditionError& e) {
      schema_fail("tolerances", e.what());
    }
  }
  if (const Json* seed = find(document, "seed")) {
    if (!seed->is_number_integer() || seed->get<long long>() < 0)
      schema_fail("seed", "expected a non-negative integer");
    s.seed = seed->get<std::uint64_t>();
  }

  switch (s.kind) {
    case ScenarioKind::system:
    case ScenarioKind::morse: {
      const Json* sys = find(document, "system");
      if (!sys) schema_fail("system", "missing required field");
      s.system = parse_system(*sys, "system");
      const double span = s.system->b_eff - s.system->a;
      const double cells = span / s.step;
      if (std::abs(cells - std::round(cells)) > 1e-9 * std::max(1.0, cells))
        schema_fail("grid.step", "grid step must divide the horizon");
      if (s.kind == ScenarioKind::morse) {
        const Json* mo = find(document, "morse");
        if (!mo) schema_fail("morse", "missing required field");
        MorseConfig cfg;
        cfg.mesh_density =
            get_number(*mo, "mesh_density", "morse.mesh_density", 200.0);
        if (!(cfg.mesh_density > 0.0))
          schema_fail("morse.mesh_density", "must be positive");
        const Json* tg = find(*mo, "t_grid");
        if (!tg) schema_fail("morse.t_grid", "missing required field");
        cfg.t_grid = parse_number_array(*tg, "morse.t_grid");
        for (double t : cfg.t_grid)
          if (!(t > s.system->a) || t > s.system->b_eff)
            schema_fail("morse.t_grid", "entries must lie in (a, b]");
        s.morse = std::move(cfg);
      }
      break;
    }
    case ScenarioKind::prescription:
    case ScenarioKind::roundtrip: {
      const Json* pres = find(document, "prescription");
      if (!pres) schema_fail("prescription", "missing required field");
      s.prescription = parse_prescription(*pres, "prescription");
      s.extend_from = get_number(document, "a", "a");
      if (!(s.extend_from < s.prescription->c))
        schema_fail("a", "must be strictly below the prescription's c");
      if (const Json* mc = find(document, "metric_checks")) {
        if (!mc->is_boolean()) schema_fail("metric_checks", "expected a boolean");
        s.metric_checks = mc->get<bool>();
      }
      break;
    }
    case ScenarioKind::truncation_family: {
      const Json* fam = find(document, "family");
      if (!fam) schema_fail("family", "missing required field");
      FamilyConfig cfg;
      const Json* preset = find(*fam, "preset");
      if (!preset || !preset->is_string())
        schema_fail("family.preset", "missing preset name");
      cfg.preset = preset->get<std::string>();
      if (cfg.preset != "reciprocal_gap_diagonal")
        schema_fail("family.preset", "unknown family preset '" + cfg.preset + "'");
      cfg.a = get_number(*fam, "a", "family.a", -0.05);
      if (!(cfg.a < 0.0)) schema_fail("family.a", "must be below c = 0");
      const Json* dims = find(*fam, "dims");
      if (!dims || !dims->is_array() || dims->empty())
        schema_fail("family.dims", "expected a non-empty integer array");
      for (size_t i = 0; i < dims->size(); ++i) {
        const Json& dj = (*dims)[i];
        if (!dj.is_number_integer() || dj.get<int>() < 2)
          schema_fail("family.dims[" + std::to_string(i) + "]",
                      "expected an integer >= 2");
        cfg.dims.push_back(dj.get<int>());
      }
      const Json* probes = find(*fam, "probes");
      cfg.probes = probes ? parse_number_array(*probes, "family.probes")
                          : std::vector<double>{1.0};
      const Json* eps = find(*fam, "eps_grid");
      cfg.eps_grid = eps ? parse_number_array(*eps, "family.eps_grid")
                         : std::vector<double>{0.05, 0.1};
      s.family = std::move(cfg);
      break;
    }
  }
  return s;
}

Scenario load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PreconditionError("cannot read scenario file: " + path);
  Json document;
  try {
    document = Json::parse(in);
  } catch (const std::exception& e) {
    schema_fail("$", std::string("invalid JSON: ") + e.what());
  }
  return parse_scenario(document);
}

namespace {

Json instants_json(const ConjugateReport& report) {
  Json arr = Json::array();
  for (const ConjugateInstant& inst : report.instants) {
    Json j;
    j["t"] = inst.t;
    j["multiplicity"] = inst.multiplicity;
    j["kind"] = inst.kind == InstantKind::monoconjugate ? "monoconjugate"
                                                        : "cluster_flagged";
    j["branches"] = inst.branches;
    j["kernel_dim"] = inst.kernel_dim_at_t;
    if (inst.e_kernel_dim >= 0) j["e_kernel_dim"] = inst.e_kernel_dim;
    if (!inst.provenance.empty()) {
      j["provenance"] = inst.provenance;
      j["prescribed_value"] = inst.prescribed_value;
    }
    j["near_zero_profile"] = inst.near_zero_profile;
    arr.push_back(std::move(j));
  }
  return arr;
}

Json quality_json(const ConjugateReport& report) {
  Json q;
  q["symplectic_drift"] = report.quality.symplectic_drift;
  q["min_transversality_gap"] = report.quality.min_transversality_gap;
  q["delta_guard"] = report.quality.delta_guard;
  q["guard_violated"] = report.quality.guard_violated;
  q["windows"] = report.windows.size();
  q["warnings"] = report.quality.warnings;
  return q;
}

std::string branches_csv(const ConjugateReport& report) {
  std::ostringstream out;
  out.setf(std::ios::scientific);
  out.precision(17);
  out << "window,t,branch,value\n";
  for (size_t w = 0; w < report.windows.size(); ++w) {
    const ChartWindow& win = report.windows[w];
    for (size_t i = 0; i < win.ts.size(); ++i)
      for (size_t k = 0; k < win.eigs[i].size(); ++k)
        out << w << ',' << win.ts[i] << ',' << k << ',' << win.eigs[i][k] << '\n';
  }
  return out.str();
}

std::string instants_csv(const ConjugateReport& report) {
  std::ostringstream out;
  out.setf(std::ios::scientific);
  out.precision(17);
  out << "t,multiplicity,kind\n";
  for (const ConjugateInstant& inst : report.instants)
    out << inst.t << ',' << inst.multiplicity << ','
        << (inst.kind == InstantKind::monoconjugate ? "monoconjugate"
                                                    : "cluster_flagged")
        << '\n';
  return out.str();
}

SingularityPrescription family_prescription(int dim) {
  // Prescribed points 1 - 1/k, k = 2..dim+1, all simple, on (0, 1).
  SingularityPrescription p;
  p.c = 0.0;
  p.b = 1.0;
  p.budget = dim + 2;
  for (int k = 2; k <= dim + 1; ++k)
    p.points.push_back({1.0 - 1.0 / static_cast<double>(k), 1});
  return p;
}

Json run_system_kind(const Scenario& s, double step, std::uint64_t seed,
                     RunOutputs& outputs) {
  DetectOptions opts;
  opts.step = step;
  opts.seed = seed;
  const ConjugateReport report = detect(*s.system, opts, s.tol);
  const MorseFlowResult flow = morse_flow(report, s.tol);

  Json results;
  results["instants"] = instants_json(report);
  Json jumps = Json::array();
  for (const MorseJump& j : flow.jumps) {
    Json jj;
    jj["t"] = j.t;
    jj["jump"] = j.jump;
    jj["index_before"] = j.index_before;
    jj["index_after"] = j.index_after;
    jj["kernel"] = j.kernel;
    jj["law_ok"] = j.law_ok;
    jumps.push_back(std::move(jj));
  }
  results["morse_jumps"] = std::move(jumps);
  results["isolation"] = isolation_check(report, s.tol);
  results["quality"] = quality_json(report);

  outputs.csv_files.emplace_back("branches.csv", branches_csv(report));
  outputs.csv_files.emplace_back("instants.csv", instants_csv(report));
  return results;
}

Json run_morse_kind(const Scenario& s, double step, std::uint64_t seed,
                    RunOutputs& outputs) {
  DetectOptions opts;
  opts.step = step;
  opts.seed = seed;
  const ConjugateReport report = detect(*s.system, opts, s.tol);
  const std::vector<IndexProfilePoint> profile =
      index_curve(*s.system, s.morse->mesh_density, s.morse->t_grid);

  Json results;
  results["instants"] = instants_json(report);
  Json prof = Json::array();
  for (const IndexProfilePoint& p : profile) {
    Json pj;
    pj["t_end"] = p.t_end;
    pj["index"] = p.index;
    pj["nullity"] = p.nullity;
    prof.push_back(std::move(pj));
  }
  results["index_profile"] = std::move(prof);

  // Expected index at t: sum of detector multiplicities strictly inside (a, t).
  bool consistent = true;
  for (const IndexProfilePoint& p : profile) {
    int expected = 0;
    for (const ConjugateInstant& inst : report.instants)
      if (inst.t < p.t_end - 1e-9) expected += inst.multiplicity;
    if (expected != p.index) consistent = false;
  }
  results["index_matches_detector"] = consistent;
  results["quality"] = quality_json(report);

  std::ostringstream csv;
  csv.setf(std::ios::scientific);
  csv.precision(17);
  csv << "t_end,index,nullity\n";
  for (const IndexProfilePoint& p : profile)
    csv << p.t_end << ',' << p.index << ',' << p.nullity << '\n';
  outputs.csv_files.emplace_back("index_profile.csv", csv.str());
  outputs.csv_files.emplace_back("instants.csv", instants_csv(report));
  return results;
}

Json run_prescription_kind(const Scenario& s, double step, std::uint64_t seed,
                           RunOutputs& outputs, bool roundtrip) {
  PipelineOptions opts;
  opts.h = step;
  opts.seed = seed;
  opts.tol = s.tol;
  const PipelineResult result = full_pipeline(*s.prescription, s.extend_from, opts);

  Json results;
  results["operator_diagonal"] = result.op.diag;
  Json prov = Json::array();
  for (EntryProvenance p : result.op.provenance)
    prov.push_back(p == EntryProvenance::point_spectrum ? "point_spectrum"
                                                        : "continuum_sample");
  results["operator_provenance"] = std::move(prov);
  results["capped_infinity"] = result.op.capped_infinity;
  results["instants"] = instants_json(result.report);
  if (result.curve->theta_mode()) {
    Json thetas = Json::array();
    for (const ConjugateInstant& inst : result.report.instants)
      thetas.push_back(result.curve->tau(inst.t));
    results["instants_theta_image"] = std::move(thetas);
  }

  Json metrics;
  metrics["lifting_drift"] = result.metrics.lifting_drift;
  metrics["reduction_residual_a"] = result.metrics.reduction_residual_a;
  metrics["reduction_residual_b"] = result.metrics.reduction_residual_b;
  metrics["symplectic_drift"] = result.metrics.symplectic_drift;
  metrics["extension_chart_selfcheck"] = result.metrics.extension.chart_selfcheck;
  metrics["extension_max_sigma_eig"] = result.metrics.extension.max_sigma_eig;
  metrics["extension_max_tau_eig"] = result.metrics.extension.max_tau_eig;
  metrics["extension_derivative_match_fd"] =
      result.metrics.extension.derivative_match_fd;
  results["stage_metrics"] = std::move(metrics);

  if (s.metric_checks) {
    const ManifoldScenario& scen = result.scenario;
    double christoffel_max = 0.0;
    for (int i = 0; i <= 8; ++i) {
      const double t = scen.a() + (scen.b_eff() - scen.a()) * i / 8.0;
      Eigen::VectorXd p = Eigen::VectorXd::Zero(scen.n() + 1);
      p(scen.n()) = t;
      for (const Eigen::MatrixXd& g : scen.christoffel_fd(p))
        christoffel_max = std::max(christoffel_max, g.cwiseAbs().maxCoeff());
    }
    Json mc;
    mc["christoffel_axis_max"] = christoffel_max;
    const double span = std::min(1.0, scen.b_eff() - scen.a());
    mc["geodesic_deviation"] = scen.geodesic_deviation(scen.a(), span);
    results["metric_checks"] = std::move(mc);
  }

  if (roundtrip) {
    const RoundtripVerdict verdict = verify_roundtrip(result);
    results["match"] = verdict.match;
    results["detail"] = verdict.detail;
  }
  results["quality"] = quality_json(result.report);

  outputs.csv_files.emplace_back("branches.csv", branches_csv(result.report));
  outputs.csv_files.emplace_back("instants.csv", instants_csv(result.report));
  return results;
}

Json run_family_kind(const Scenario& s, double step, std::uint64_t seed,
                     RunOutputs& outputs) {
  const FamilyConfig& cfg = *s.family;
  PipelineOptions popts;
  popts.h = step;
  popts.seed = seed;
  popts.tol = s.tol;
  popts.b_eff = 0.999;  // horizon covering every family instant

  const auto family = [&](int dim) {
    return prescribed_system(family_prescription(dim), cfg.a, popts).system;
  };
  DetectOptions dopts;
  dopts.step = step;
  dopts.seed = seed;
  const TruncationStudy study = truncation_study(family, cfg.dims, cfg.probes,
                                                 cfg.eps_grid, dopts, s.tol);

  Json results;
  results["dims"] = study.dims;
  results["eps_grid"] = study.eps_grid;
  Json entries = Json::array();
  std::vector<double> dims_d, last_gaps;
  std::ostringstream csv;
  csv.setf(std::ios::scientific);
  csv.precision(17);
  csv << "dim,probe,eps,near_zero_count,last_gap,max_gap_in_window\n";
  for (const TruncationEntry& e : study.entries) {
    Json ej;
    ej["dim"] = e.dim;
    ej["instants"] = instants_json(e.report);
    Json probes = Json::array();
    for (const TruncationProbe& p : e.probes) {
      Json pj;
      pj["t"] = p.t;
      pj["near_zero_counts"] = p.near_zero_counts;
      pj["last_gap"] = p.last_gap;
      pj["max_gap_in_window"] = p.max_gap_in_window;
      probes.push_back(pj);
      for (size_t k = 0; k < study.eps_grid.size(); ++k)
        csv << e.dim << ',' << p.t << ',' << study.eps_grid[k] << ','
            << p.near_zero_counts[k] << ',' << p.last_gap << ','
            << p.max_gap_in_window << '\n';
    }
    ej["probes"] = std::move(probes);
    entries.push_back(std::move(ej));
    if (!e.probes.empty() && !std::isnan(e.probes.front().last_gap)) {
      dims_d.push_back(static_cast<double>(e.dim));
      last_gaps.push_back(e.probes.front().last_gap);
    }
  }
  results["entries"] = std::move(entries);
  if (dims_d.size() >= 2)
    results["gap_decay_exponent"] = fit_decay_exponent(dims_d, last_gaps);
  outputs.csv_files.emplace_back("truncation_study.csv", csv.str());
  return results;
}

}  // namespace

RunOutputs run_scenario(const Scenario& scenario, const RunOptions& options) {
  const auto t_start = std::chrono::steady_clock::now();
  const double step = options.step_override.value_or(scenario.step);
  const std::uint64_t seed = options.seed_override.value_or(scenario.seed);
  if (!(step > 0.0)) throw SchemaError("grid.step", "must be positive");

  RunOutputs outputs;
  Json report;
  report["schema_version"] = kSchemaVersion;
  report["artifact_version"] = kArtifactVersion;
  report["name"] = scenario.name;
  report["seed"] = seed;
  report["step"] = step;
  report["scenario"] = scenario.echo;

  Json results;
  switch (scenario.kind) {
    case ScenarioKind::system:
      report["kind"] = "system";
      results = run_system_kind(scenario, step, seed, outputs);
      break;
    case ScenarioKind::morse:
      report["kind"] = "morse";
      results = run_morse_kind(scenario, step, seed, outputs);
      break;
    case ScenarioKind::prescription:
      report["kind"] = "prescription";
      results = run_prescription_kind(scenario, step, seed, outputs, false);
      break;
    case ScenarioKind::roundtrip:
      report["kind"] = "roundtrip";
      results = run_prescription_kind(scenario, step, seed, outputs, true);
      break;
    case ScenarioKind::truncation_family:
      report["kind"] = "truncation_family";
      results = run_family_kind(scenario, step, seed, outputs);
      break;
  }
  report["results"] = std::move(results);

  const auto t_end = std::chrono::steady_clock::now();
  report["wall_time_sec"] =
      std::chrono::duration<double>(t_end - t_start).count();
  if (!options.csv) outputs.csv_files.clear();
  outputs.report = std::move(report);
  return outputs;
}

std::string catalog_text() {
  return
      "scenario kinds:\n"
      "  system              conjugate-instant detection on a catalog system\n"
      "  morse               index-form profile along a Riemannian system\n"
      "  prescription        realize prescribed conjugate data as a metric scenario\n"
      "  roundtrip           prescription realization plus detector match verdict\n"
      "  truncation_family   accumulation study over truncation dimensions\n"
      "component families:\n"
      "  constant            fixed n x n matrix\n"
      "  zero, identity, scaled_identity\n"
      "  polynomial          sum_j t^j M_j with matrix coefficients\n"
      "  diagonal_profile    diagonal entries polynomial in t\n"
      "  tabulated           uniform-grid values (internal: gauges, liftings)\n"
      "system presets:\n"
      "  riemannian_constant_curvature   A = 0, B = 1, C = -kappa 1\n"
      "  flat                            A = 0, B = 1, C = 0\n"
      "family presets:\n"
      "  reciprocal_gap_diagonal         points 1 - 1/k, k = 2..N+1, on [0, 1)\n";
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open for writing: " + tmp);
    out << content;
    if (!out.good()) throw Error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw Error("atomic rename failed: " + path);
}

}  // namespace conjflow
