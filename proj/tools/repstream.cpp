#include <CLI11.hpp>

#include "harness/harness.hpp"

int main(int argc, char** argv) {
  using namespace repstream::harness;
  init_logging();

  CLI::App app{"Reputation-driven overlay streaming simulator"};
  app.require_subcommand(1);

  std::string scenario;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> duration;
  std::vector<double> alphas{5e-5, 1e-4, 2e-4, 4e-4};

  auto* run = app.add_subcommand("run", "Run a scenario file and write metrics");
  run->add_option("--scenario", scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "Output directory");
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("--duration-ms", duration, "Override the scenario duration");

  auto* sweep = app.add_subcommand("alpha-sweep", "Free-rider decay curves for several alphas");
  sweep->add_option("--alphas", alphas, "Decay rates per ms, ascending")->delimiter(',');
  sweep->add_option("--out", out, "Output directory");
  sweep->add_option("--duration-ms", duration, "Curve length");

  auto* eq = app.add_subcommand("equilibrium", "Mixed-population payoff experiment");
  eq->add_option("--out", out, "Output directory");
  eq->add_option("--seed", seed, "Seed");
  eq->add_option("--duration-ms", duration, "Duration");

  auto* validate = app.add_subcommand("validate", "Check a scenario file without running it");
  validate->add_option("--scenario", scenario, "Scenario JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitInvalidScenario;
  }

  if (*run) return cmd_run(scenario, out, seed, duration);
  if (*sweep) return cmd_alpha_sweep(alphas, out, duration);
  if (*eq) return cmd_equilibrium(out, seed, duration);
  return cmd_validate(scenario);
}
