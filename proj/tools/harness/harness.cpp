#include "harness.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "repstream/error.hpp"

namespace repstream::harness {

namespace {

using nlohmann::ordered_json;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path.string());
  return out;
}

ordered_json class_json(const ClassSummary& c) {
  ordered_json j;
  j["peers"] = c.peers;
  j["live_at_end"] = c.live;
  j["mean_final_reputation"] = c.mean_final_reputation;
  j["reports_total"] = c.reports_total;
  j["reports_included"] = c.reports_included;
  j["report_inclusion_fraction"] = c.inclusion_fraction;
  j["fraction_detached"] = c.fraction_detached;
  j["fraction_leaf_or_detached"] = c.fraction_leaf_or_detached;
  j["fraction_below_0_1"] = c.fraction_below_threshold;
  return j;
}

void apply_overrides(ScenarioSpec& spec, std::optional<std::uint64_t> seed,
                     std::optional<Millis> duration_ms) {
  if (seed) spec.seed = *seed;
  if (duration_ms) spec.duration_ms = *duration_ms;
  validate_scenario(spec);
}

}  // namespace

void init_logging() {
  auto logger = spdlog::stderr_color_mt("repstream");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("REPSTREAM_LOG");
  const std::string level = env == nullptr ? "error" : env;
  if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else if (level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else {
    spdlog::set_level(spdlog::level::err);
  }
}

// --- canned scenarios -------------------------------------------------------------------------

ScenarioSpec default_scenario(std::size_t peers, std::uint64_t seed) {
  ScenarioSpec s;
  s.name = "default";
  s.seed = seed;
  s.duration_ms = 60000;
  s.peer_count = peers;
  return s;
}

ScenarioSpec equilibrium_scenario(std::uint64_t seed) {
  ScenarioSpec s;
  s.name = "equilibrium";
  s.seed = seed;
  s.duration_ms = 120000;
  s.peer_count = 100;
  s.mix = PolicyMix{0.7, 0.2, 0.1};
  s.malicious_strategy = ReportStrategy::Invert;
  return s;
}

ScenarioSpec churn_scenario(std::uint64_t seed) {
  ScenarioSpec s;
  s.name = "churn";
  s.seed = seed;
  s.duration_ms = 75000;
  s.peer_count = 100;
  s.departures.push_back(DepartureSpec{60000, DepartureRule::InteriorFraction, 0, 0.1});
  return s;
}

ScenarioSpec flash_crowd_scenario(std::uint64_t seed) {
  ScenarioSpec s;
  s.name = "flash_crowd";
  s.seed = seed;
  s.duration_ms = 45000;
  s.peer_count = 10;
  s.flash_crowd = FlashCrowdSpec{10000, 200, PolicyMix{}};
  return s;
}

ScenarioSpec lone_free_rider_scenario(double alpha, Millis duration_ms) {
  ScenarioSpec s;
  s.name = "lone_free_rider";
  s.seed = 1;
  s.duration_ms = duration_ms;
  s.peer_count = 1;
  s.mix = PolicyMix{0.0, 1.0, 0.0};
  s.join_window_ms = 0;
  s.protocol.decay.alpha = alpha;
  return s;
}

// --- outputs ----------------------------------------------------------------------------------

std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

void write_metrics_csv(const MetricsLog& log, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "time,peer,metric,value\n";
  for (const auto& row : log.series) {
    out << row.time << ',' << row.peer.key << ',' << row.metric << ',' << format_double(row.value) << '\n';
  }
}

void write_topology_csv(const MetricsLog& log, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "time,child,parent\n";
  for (const auto& row : log.topology) {
    out << row.time << ',' << row.child.key << ',';
    if (row.parent) out << row.parent->key;
    out << '\n';
  }
}

void write_summary_json(const MetricsLog& log, const ScenarioSpec& spec,
                        const std::filesystem::path& path) {
  ordered_json j;
  ordered_json params;
  params["name"] = spec.name;
  params["seed"] = spec.seed;
  params["duration_ms"] = spec.duration_ms;
  params["subscribers"] = spec.total_subscribers();
  params["fanout"] = spec.protocol.fanout;
  params["alpha_per_ms"] = spec.protocol.decay.alpha;
  params["beacon_period_ms"] = spec.protocol.beacon_period;
  params["chunk_period_ms"] = spec.protocol.chunk_period;
  params["join_timeout_ms"] = spec.protocol.join_timeout;
  params["keepalive_timeout_ms"] = spec.protocol.keepalive_timeout;
  params["malicious_strategy"] = std::string(to_string(spec.malicious_strategy));
  params["latency_mode"] = std::string(to_string(spec.latency.mode));
  j["run_parameters"] = params;
  j["trace_hash"] = hex64(log.trace_hash);
  j["events_processed"] = log.events_processed;

  ordered_json payoff;
  for (const auto& [kind, summary] : log.classes) payoff[std::string(to_string(kind))] = class_json(summary);
  j["payoff_summary"] = payoff;

  ordered_json counters;
  for (std::size_t k = 0; k < kMessageKindCount; ++k) {
    ordered_json c;
    c["sent"] = log.counters.sent[k];
    c["delivered"] = log.counters.delivered[k];
    c["dropped_departure"] = log.counters.dropped_departure[k];
    c["lost"] = log.counters.lost[k];
    counters[std::string(to_string(static_cast<MessageKind>(k)))] = c;
  }
  j["message_counters"] = counters;
  j["in_flight_at_end"] = log.counters.in_flight;
  j["counters_reconcile"] = log.counters.reconciles();

  j["snapshots"] = log.snapshots;
  j["snapshot_violations"] = log.snapshot_violations;
  j["transient_cycles"] = log.transient_cycles.size();
  j["max_children_seen"] = log.max_children_seen;
  std::size_t recovered = 0;
  Millis worst = 0;
  for (const auto& o : log.orphans) {
    if (!o.recovered_at) continue;
    ++recovered;
    worst = std::max<Millis>(worst, *o.recovered_at - o.orphaned_at);
  }
  j["orphans"] = {{"total", log.orphans.size()}, {"recovered", recovered}, {"worst_recovery_ms", worst}};
  j["bounds_note"] =
      "Numeric acceptance bounds in this project are self-generated regression pins, not "
      "externally published reference values.";

  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

void write_run_outputs(const MetricsLog& log, const ScenarioSpec& spec,
                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_metrics_csv(log, dir / "metrics.csv");
  write_topology_csv(log, dir / "topology.csv");
  write_summary_json(log, spec, dir / "summary.json");
}

std::vector<ParsedMetric> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::NotFound, "cannot read " + path.string());
  std::vector<ParsedMetric> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string time, peer, metric, value;
    std::getline(fields, time, ',');
    std::getline(fields, peer, ',');
    std::getline(fields, metric, ',');
    std::getline(fields, value, ',');
    rows.push_back({std::stoull(time), std::stoull(peer), metric, std::strtod(value.c_str(), nullptr)});
  }
  return rows;
}

// --- decay sweep ------------------------------------------------------------------------------

std::vector<DecayCurve> run_alpha_sweep(const std::vector<double>& alphas, Millis duration_ms) {
  std::vector<DecayCurve> curves;
  for (double alpha : alphas) {
    const ScenarioSpec spec = lone_free_rider_scenario(alpha, duration_ms);
    Simulator sim(spec);
    const MetricsLog log = sim.run();
    const PeerId rider = Simulator::peer_id_for(spec.seed, 1);
    SimTime joined = 0;
    for (const auto& p : log.peers) {
      if (p.id == rider) joined = p.joined_at;
    }
    DecayCurve curve;
    curve.alpha = alpha;
    for (const auto& row : log.series) {
      if (row.peer != rider || row.metric != "reputation") continue;
      const double analytic =
          kInitialReputation * std::exp(-alpha * static_cast<double>(row.time - joined));
      curve.points.push_back({row.time, analytic, row.value});
      curve.max_abs_deviation = std::max(curve.max_abs_deviation, std::abs(analytic - row.value));
    }
    spdlog::info("alpha {:.6g}: {} samples, max deviation {:.3g}", alpha, curve.points.size(),
                 curve.max_abs_deviation);
    curves.push_back(std::move(curve));
  }
  return curves;
}

std::optional<std::string> check_sweep_ordering(const std::vector<DecayCurve>& curves) {
  for (std::size_t i = 1; i < curves.size(); ++i) {
    const auto& lo = curves[i - 1];
    const auto& hi = curves[i];
    if (!(hi.alpha > lo.alpha)) return "alphas must be strictly ascending";
    if (lo.points.size() != hi.points.size()) return "curves sampled at different times";
    for (std::size_t k = 0; k < lo.points.size(); ++k) {
      const auto& a = lo.points[k];
      const auto& b = hi.points[k];
      if (a.time_ms != b.time_ms) return "curves sampled at different times";
      if (a.time_ms == 0) {
        if (a.simulated != b.simulated) return "curves differ at t = 0";
      } else if (!(b.simulated < a.simulated)) {
        std::ostringstream os;
        os << "alpha " << hi.alpha << " not below alpha " << lo.alpha << " at t=" << a.time_ms;
        return os.str();
      }
    }
  }
  return std::nullopt;
}

void write_sweep_csv(const std::vector<DecayCurve>& curves, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "alpha,time_ms,analytic,simulated\n";
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      out << format_double(c.alpha) << ',' << p.time_ms << ',' << format_double(p.analytic) << ','
          << format_double(p.simulated) << '\n';
    }
  }
}

// --- equilibrium ------------------------------------------------------------------------------

std::optional<std::string> check_equilibrium(const MetricsLog& log) {
  const auto get = [&](PolicyKind k) {
    auto it = log.classes.find(k);
    return it == log.classes.end() ? ClassSummary{} : it->second;
  };
  const ClassSummary alt = get(PolicyKind::Altruistic);
  const ClassSummary fr = get(PolicyKind::FreeRider);
  const ClassSummary mal = get(PolicyKind::Malicious);
  std::ostringstream os;
  if (!(alt.mean_final_reputation > mal.mean_final_reputation)) {
    os << "altruistic mean reputation " << alt.mean_final_reputation << " not above malicious "
       << mal.mean_final_reputation;
    return os.str();
  }
  if (!(mal.mean_final_reputation >= fr.mean_final_reputation)) {
    os << "malicious mean reputation " << mal.mean_final_reputation << " below free rider "
       << fr.mean_final_reputation;
    return os.str();
  }
  if (!(alt.inclusion_fraction > mal.inclusion_fraction)) {
    os << "altruistic report inclusion " << alt.inclusion_fraction << " not above malicious "
       << mal.inclusion_fraction;
    return os.str();
  }
  return std::nullopt;
}

// --- subcommands ------------------------------------------------------------------------------

int cmd_validate(const std::filesystem::path& scenario) {
  try {
    const ScenarioSpec spec = load_scenario(scenario);
    spdlog::info("{}: valid ({} subscribers)", scenario.string(), spec.total_subscribers());
    return kExitOk;
  } catch (const Error& e) {
    std::fprintf(stderr, "%s: %s\n", scenario.string().c_str(), e.what());
    return kExitInvalidScenario;
  }
}

int cmd_run(const std::filesystem::path& scenario, const std::filesystem::path& out,
            std::optional<std::uint64_t> seed, std::optional<Millis> duration_ms) {
  ScenarioSpec spec;
  try {
    spec = load_scenario(scenario);
    apply_overrides(spec, seed, duration_ms);
  } catch (const Error& e) {
    std::fprintf(stderr, "%s: %s\n", scenario.string().c_str(), e.what());
    return kExitInvalidScenario;
  }
  try {
    Simulator sim(spec);
    const MetricsLog log = sim.run();
    write_run_outputs(log, spec, out);
    spdlog::info("run {} finished: {} events, trace {}", spec.name, log.events_processed,
                 hex64(log.trace_hash));
    return kExitOk;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "run aborted: %s\n", e.what());
    return kExitRuntimeAbort;
  }
}

int cmd_alpha_sweep(const std::vector<double>& alphas, const std::filesystem::path& out,
                    std::optional<Millis> duration_ms) {
  try {
    for (std::size_t i = 1; i < alphas.size(); ++i) {
      if (!(alphas[i] > alphas[i - 1])) {
        std::fprintf(stderr, "alphas must be strictly ascending\n");
        return kExitInvalidScenario;
      }
    }
    for (double a : alphas) {
      if (!(a > 0.0) || !std::isfinite(a)) {
        std::fprintf(stderr, "alpha must be positive and finite\n");
        return kExitInvalidScenario;
      }
    }
    const auto curves = run_alpha_sweep(alphas, duration_ms.value_or(60000));
    std::filesystem::create_directories(out);
    write_sweep_csv(curves, out / "alpha_sweep.csv");
    if (const auto bad = check_sweep_ordering(curves)) {
      std::fprintf(stderr, "ordering violated: %s\n", bad->c_str());
      return kExitAssertion;
    }
    for (const auto& c : curves) {
      if (c.max_abs_deviation >= 1e-9) {
        std::fprintf(stderr, "alpha %g deviates from closed form by %g\n", c.alpha, c.max_abs_deviation);
        return kExitAssertion;
      }
    }
    return kExitOk;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "sweep aborted: %s\n", e.what());
    return kExitRuntimeAbort;
  }
}

int cmd_equilibrium(const std::filesystem::path& out, std::optional<std::uint64_t> seed,
                    std::optional<Millis> duration_ms) {
  ScenarioSpec spec = equilibrium_scenario();
  try {
    apply_overrides(spec, seed, duration_ms);
  } catch (const Error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kExitInvalidScenario;
  }
  MetricsLog log;
  try {
    Simulator sim(spec);
    log = sim.run();
    write_run_outputs(log, spec, out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "run aborted: %s\n", e.what());
    return kExitRuntimeAbort;
  }
  if (const auto bad = check_equilibrium(log)) {
    std::fprintf(stderr, "equilibrium ordering violated: %s\n", bad->c_str());
    return kExitAssertion;
  }
  return kExitOk;
}

}  // namespace repstream::harness
