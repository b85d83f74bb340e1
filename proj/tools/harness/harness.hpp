#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "repstream/scenario.hpp"
#include "repstream/simnet.hpp"

namespace repstream::harness {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalidScenario = 2;
inline constexpr int kExitRuntimeAbort = 3;
inline constexpr int kExitAssertion = 4;

/// Reads REPSTREAM_LOG (error, info, debug) and configures the stderr logger.
void init_logging();

// Canned scenarios.
ScenarioSpec default_scenario(std::size_t peers = 50, std::uint64_t seed = 7);
ScenarioSpec equilibrium_scenario(std::uint64_t seed = 42);
ScenarioSpec churn_scenario(std::uint64_t seed = 11);
ScenarioSpec flash_crowd_scenario(std::uint64_t seed = 5);
/// Source plus one free rider joining at t = 0.
ScenarioSpec lone_free_rider_scenario(double alpha, Millis duration_ms);

// Output files.
void write_metrics_csv(const MetricsLog& log, const std::filesystem::path& path);
void write_topology_csv(const MetricsLog& log, const std::filesystem::path& path);
void write_summary_json(const MetricsLog& log, const ScenarioSpec& spec,
                        const std::filesystem::path& path);
void write_run_outputs(const MetricsLog& log, const ScenarioSpec& spec,
                       const std::filesystem::path& dir);

struct ParsedMetric {
  SimTime time = 0;
  std::uint64_t peer = 0;
  std::string metric;
  double value = 0.0;
};
std::vector<ParsedMetric> read_metrics_csv(const std::filesystem::path& path);

std::string hex64(std::uint64_t v);

// Decay sweep.
struct DecayPoint {
  SimTime time_ms = 0;
  double analytic = 0.0;
  double simulated = 0.0;
};
struct DecayCurve {
  double alpha = 0.0;
  std::vector<DecayPoint> points;
  double max_abs_deviation = 0.0;
};
std::vector<DecayCurve> run_alpha_sweep(const std::vector<double>& alphas, Millis duration_ms);
/// Empty when every curve is strictly below its lower-alpha neighbour for t > 0 and all
/// curves agree at t = 0; otherwise a description of the first violation.
std::optional<std::string> check_sweep_ordering(const std::vector<DecayCurve>& curves);
void write_sweep_csv(const std::vector<DecayCurve>& curves, const std::filesystem::path& path);

// Equilibrium ordering.
/// Empty when altruistic > malicious >= free rider on mean final reputation and altruistic
/// report inclusion exceeds malicious; otherwise the violated ordering.
std::optional<std::string> check_equilibrium(const MetricsLog& log);

// Subcommands; return process exit codes.
int cmd_run(const std::filesystem::path& scenario, const std::filesystem::path& out,
            std::optional<std::uint64_t> seed, std::optional<Millis> duration_ms);
int cmd_alpha_sweep(const std::vector<double>& alphas, const std::filesystem::path& out,
                    std::optional<Millis> duration_ms);
int cmd_equilibrium(const std::filesystem::path& out, std::optional<std::uint64_t> seed,
                    std::optional<Millis> duration_ms);
int cmd_validate(const std::filesystem::path& scenario);

}  // namespace repstream::harness
