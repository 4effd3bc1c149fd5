// conjflow — scenario-driven runner: parse a scenario file, execute the
// matching pipeline, emit machine-readable reports and plot-ready CSV data.
//
// Exit codes: 0 success, 2 schema violation, 3 numerical-quality failure,
// 4 internal error.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "conjflow/scenario.hpp"

namespace fs = std::filesystem;

namespace {

std::string scenario_stem(const conjflow::Scenario& scenario,
                          const std::string& file) {
  if (!scenario.name.empty()) return scenario.name;
  return fs::path(file).stem().string();
}

int run_command(const std::string& file, const std::string& out_dir, bool csv,
                std::optional<std::uint64_t> seed, std::optional<double> step) {
  const conjflow::Scenario scenario = conjflow::load_scenario_file(file);
  conjflow::RunOptions options;
  options.csv = csv;
  options.seed_override = seed;
  options.step_override = step;

  const conjflow::RunOutputs outputs = conjflow::run_scenario(scenario, options);

  fs::create_directories(out_dir);
  const std::string stem = scenario_stem(scenario, file);
  const fs::path report_path = fs::path(out_dir) / (stem + ".report.json");
  conjflow::write_file_atomic(report_path.string(), outputs.report.dump(2) + "\n");
  std::cout << report_path.string() << "\n";
  for (const auto& [suffix, content] : outputs.csv_files) {
    const fs::path csv_path = fs::path(out_dir) / (stem + "." + suffix);
    conjflow::write_file_atomic(csv_path.string(), content);
    std::cout << csv_path.string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conjflow — conjugate-instant laboratory for symplectic systems"};
  app.require_subcommand(1);

  std::string scenario_file;
  std::string out_dir = ".";
  bool csv = false;
  std::optional<std::uint64_t> seed;
  std::optional<double> step;

  CLI::App* run = app.add_subcommand("run", "execute a scenario file");
  run->add_option("scenario", scenario_file, "scenario JSON file")->required();
  run->add_option("--out", out_dir, "output directory");
  run->add_flag("--csv", csv, "also write CSV curve dumps");
  run->add_option("--seed", seed, "override the scenario seed");
  run->add_option("--step", step, "override the grid step");

  CLI::App* catalog = app.add_subcommand("catalog", "list scenario kinds and presets");

  CLI::App* validate = app.add_subcommand("validate", "schema-check a scenario file");
  std::string validate_file;
  validate->add_option("scenario", validate_file, "scenario JSON file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return run_command(scenario_file, out_dir, csv, seed, step);
    if (catalog->parsed()) {
      std::cout << conjflow::catalog_text();
      return 0;
    }
    if (validate->parsed()) {
      conjflow::load_scenario_file(validate_file);
      std::cout << "ok\n";
      return 0;
    }
  } catch (const conjflow::SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return 2;
  } catch (const conjflow::QualityError& e) {
    std::cerr << "numerical-quality failure: " << e.what()
              << " (metric " << e.metric() << ")\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 4;
}
