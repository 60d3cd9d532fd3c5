#include <cstdio>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "lpm/sim/harness.hpp"

using namespace lpm;
namespace fs = std::filesystem;

namespace {

int run(const std::vector<sim::ScenarioConfig>& scenarios, const std::string& topology, const fs::path& out) {
  sim::RunOptions opt;
  opt.topology = sim::topology_from_name(topology);
  opt.work_dir = out / "work";
  std::vector<sim::Metrics> rows;
  bool all_ok = true;
  for (const auto& sc : scenarios) {
    for (const auto& w : sc.warnings()) std::cerr << "warning: " << sc.name << ": " << w << '\n';
    rows.push_back(sim::run_scenario(sc, opt));
    for (const auto& c : sim::evaluate(sc, rows.back())) {
      std::cout << (c.ok ? "PASS " : "FAIL ") << sc.name << '.' << c.name << ": " << c.detail << '\n';
      all_ok = all_ok && c.ok;
    }
  }
  std::cout << '\n';
  sim::print_table(std::cout, rows);
  const auto csv = out / "metrics.csv";
  sim::write_csv(csv, rows);
  std::cout << "\nwrote " << csv.string() << '\n';
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scenario harness for the edge/cloud maintenance pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string topology = "inproc";
  std::string out = "sim-out";
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log component activity");

  auto* run_cmd = app.add_subcommand("run", "Run one or more scenario files");
  std::vector<std::string> files;
  run_cmd->add_option("--scenario", files, "Scenario file (repeatable)")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--topology", topology, "inproc or tcp")->check(CLI::IsMember({"inproc", "tcp"}));
  run_cmd->add_option("--out", out, "Output directory for metrics.csv and state");

  auto* demo_cmd = app.add_subcommand("demo", "Run the built-in demo scenario");
  demo_cmd->add_option("--topology", topology, "inproc or tcp")->check(CLI::IsMember({"inproc", "tcp"}));
  demo_cmd->add_option("--out", out, "Output directory for metrics.csv and state");

  auto* cat_cmd = app.add_subcommand("catalog", "Print the fault catalog derived from a scenario's tones");
  std::string cat_scenario;
  cat_cmd->add_option("--scenario", cat_scenario, "Scenario file (default: built-in demo)")
      ->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  if (verbose) log::set_level(log::Level::info);

  try {
    if (*run_cmd) {
      std::vector<sim::ScenarioConfig> scenarios;
      for (const auto& f : files) scenarios.push_back(sim::load_scenario(f));
      return run(scenarios, topology, out);
    }
    if (*demo_cmd) return run({sim::demo_scenario()}, topology, out);
    const auto sc = cat_scenario.empty() ? sim::demo_scenario() : sim::load_scenario(cat_scenario);
    std::cout << cloud::to_json(sim::build_catalog(sc)).dump(2) << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
