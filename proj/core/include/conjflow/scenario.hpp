// scenario.hpp — scenario-file schema, pipeline dispatch, and report
// emission for the command-line runner. Reports are deterministic given
// scenario + seed (only the wall_time_sec field varies between runs).

#pragma once

#include <json.hpp>
#include <optional>
#include <string>

#include "conjflow/construct.hpp"
#include "conjflow/morse.hpp"

namespace conjflow {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kArtifactVersion = "0.1.0";

enum class ScenarioKind { system, morse, prescription, roundtrip, truncation_family };

struct MorseConfig {
  double mesh_density = 200.0;
  std::vector<double> t_grid;
};

struct FamilyConfig {
  std::string preset;  // "reciprocal_gap_diagonal"
  double a = -0.05;
  std::vector<int> dims;
  std::vector<double> probes;
  std::vector<double> eps_grid;
};

struct Scenario {
  ScenarioKind kind = ScenarioKind::system;
  std::string name;
  Json echo;  // the full scenario document, replayed into the report
  double step = 1e-3;
  std::uint64_t seed = 0;
  Tolerance tol;

  std::optional<SymplecticSystemSpec> system;          // system | morse
  std::optional<MorseConfig> morse;                    // morse
  std::optional<SingularityPrescription> prescription; // prescription | roundtrip
  double extend_from = 0.0;                            // the "a" of the pipeline
  bool metric_checks = false;
  std::optional<FamilyConfig> family;                  // truncation_family
};

// Throws SchemaError carrying the JSON path of the offending field.
Scenario parse_scenario(const Json& document);
Scenario load_scenario_file(const std::string& path);

struct RunOptions {
  std::optional<std::uint64_t> seed_override;
  std::optional<double> step_override;
  bool csv = false;
};

struct RunOutputs {
  Json report;
  // file suffix (e.g. "branches.csv") -> content
  std::vector<std::pair<std::string, std::string>> csv_files;
};

RunOutputs run_scenario(const Scenario& scenario, const RunOptions& options);

// Stable, documented identifiers for scenario kinds, component families and
// presets.
std::string catalog_text();

// temp file + rename in the target directory.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace conjflow
