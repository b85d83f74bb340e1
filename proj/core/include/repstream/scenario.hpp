#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "repstream/ids.hpp"
#include "repstream/peer_node.hpp"

namespace repstream {

struct PolicyMix {
  double altruistic = 1.0;
  double free_rider = 0.0;
  double malicious = 0.0;
};

enum class LatencyMode : std::uint8_t { Uniform, Matrix, Coordinates };

struct LatencySpec {
  LatencyMode mode = LatencyMode::Uniform;
  Millis min_ms = 10;
  Millis max_ms = 50;
  std::vector<std::vector<Millis>> matrix;          // by peer index, source = 0
  std::vector<std::pair<double, double>> positions;  // by peer index, source = 0
  double ms_per_unit = 1.0;
};

struct ArrivalSpec {
  SimTime at_ms = 0;
  std::size_t count = 0;
  PolicyMix mix;
};

enum class DepartureRule : std::uint8_t { Random, InteriorFraction, Leaf };

struct DepartureSpec {
  SimTime at_ms = 0;
  DepartureRule rule = DepartureRule::Random;
  std::size_t count = 0;  // Random, Leaf
  double fraction = 0.0;  // InteriorFraction
};

struct FlashCrowdSpec {
  SimTime at_ms = 0;
  std::size_t count = 0;
  PolicyMix mix;
};

/// Parsed and validated scenario file.
struct ScenarioSpec {
  std::string name = "scenario";
  Millis duration_ms = 60000;
  std::uint64_t seed = 1;
  std::size_t sources = 1;
  ProtocolConfig protocol;

  std::size_t peer_count = 0;  // subscribers present from the start, source excluded
  PolicyMix mix;
  ReportStrategy malicious_strategy = ReportStrategy::Invert;
  Millis join_window_ms = 1000;  // initial subscribers join uniformly inside [0, window]

  LatencySpec latency;
  std::vector<ArrivalSpec> arrivals;
  std::vector<DepartureSpec> departures;
  std::optional<FlashCrowdSpec> flash_crowd;

  Millis sample_period_ms = 1000;
  Millis bootstrap_latency_ms = 20;
  double drop_probability = 0.0;
  std::optional<SimTime> stream_end_ms;
  SessionInfo session{"live", "speaker", "2026-01-01", "12:00"};

  /// Total subscribers that will ever exist, including arrivals and the flash crowd.
  std::size_t total_subscribers() const noexcept;
};

/// Parse JSON scenario text. Throws Error(InvalidScenario) whose message starts with
/// "line N:" when the offending key can be located.
ScenarioSpec parse_scenario(std::string_view text);
ScenarioSpec load_scenario(const std::filesystem::path& path);

/// Semantic checks on an already-built spec (no line information). Throws InvalidScenario.
void validate_scenario(const ScenarioSpec& spec);

std::string_view to_string(LatencyMode mode) noexcept;
std::string_view to_string(DepartureRule rule) noexcept;

}  // namespace repstream
