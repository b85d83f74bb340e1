#include "repstream/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include <json.hpp>

#include "repstream/error.hpp"

namespace repstream {

namespace {

using nlohmann::json;

std::size_t line_at_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

/// Walks the raw text key by key so errors can point at a line number.
class Locator {
 public:
  explicit Locator(std::string_view text) : text_(text) {}

  std::optional<std::size_t> line_of(const std::vector<std::string>& path) const {
    std::size_t pos = 0;
    bool found = false;
    for (const auto& key : path) {
      if (key.empty() || std::isdigit(static_cast<unsigned char>(key.front()))) continue;
      const std::string quoted = "\"" + key + "\"";
      const auto at = text_.find(quoted, pos);
      if (at == std::string_view::npos) break;
      pos = at + quoted.size();
      found = true;
    }
    if (!found) return std::nullopt;
    return line_at_offset(text_, pos);
  }

 private:
  std::string_view text_;
};

std::string join_path(const std::vector<std::string>& path) {
  std::string out;
  for (const auto& p : path) {
    if (!out.empty()) out += '.';
    out += p;
  }
  return out.empty() ? "<root>" : out;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : locator_(text) {}

  [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& what) const {
    std::string message;
    if (const auto line = locator_.line_of(path)) message = "line " + std::to_string(*line) + ": ";
    message += join_path(path) + ": " + what;
    throw Error(ErrorCode::InvalidScenario, message);
  }

  void check_keys(const json& object, const std::vector<std::string>& path,
                  std::initializer_list<std::string_view> allowed) const {
    if (!object.is_object()) fail(path, "expected an object");
    for (const auto& [key, value] : object.items()) {
      bool ok = false;
      for (auto a : allowed) ok = ok || a == key;
      if (!ok) {
        auto child = path;
        child.push_back(key);
        fail(child, "unknown field");
      }
    }
  }

  std::uint64_t unsigned_field(const json& value, const std::vector<std::string>& path) const {
    if (value.is_number_unsigned()) return value.get<std::uint64_t>();
    if (value.is_number_integer()) fail(path, "must not be negative");
    if (value.is_number_float()) {
      const double d = value.get<double>();
      if (d >= 0 && std::floor(d) == d && d < 1.8e19) return static_cast<std::uint64_t>(d);
    }
    fail(path, "expected a non-negative integer");
  }

  double number_field(const json& value, const std::vector<std::string>& path) const {
    if (!value.is_number()) fail(path, "expected a number");
    const double d = value.get<double>();
    if (!std::isfinite(d)) fail(path, "must be finite");
    return d;
  }

  std::string string_field(const json& value, const std::vector<std::string>& path) const {
    if (!value.is_string()) fail(path, "expected a string");
    return value.get<std::string>();
  }

  PolicyMix mix(const json& value, const std::vector<std::string>& path) const {
    check_keys(value, path, {"altruistic", "free_rider", "malicious"});
    PolicyMix m{0.0, 0.0, 0.0};
    auto get = [&](const char* key, double& out) {
      if (value.contains(key)) {
        out = number_field(value.at(key), extend(path, key));
        if (out < 0.0 || out > 1.0) fail(extend(path, key), "fraction must lie in [0,1]");
      }
    };
    get("altruistic", m.altruistic);
    get("free_rider", m.free_rider);
    get("malicious", m.malicious);
    const double sum = m.altruistic + m.free_rider + m.malicious;
    if (std::abs(sum - 1.0) > 1e-9) {
      std::ostringstream os;
      os << "policy fractions sum to " << sum << ", expected 1";
      fail(path, os.str());
    }
    return m;
  }

  static std::vector<std::string> extend(std::vector<std::string> path, const std::string& key) {
    path.push_back(key);
    return path;
  }

  ScenarioSpec parse(const json& root) const {
    const std::vector<std::string> top;
    check_keys(root, top,
               {"name", "duration_ms", "seed", "sources", "fanout", "alpha", "beacon_period_ms",
                "chunk_period_ms", "join_timeout_ms", "keepalive_timeout_ms", "peers", "latency",
                "churn", "flash_crowd", "protocol", "sample_period_ms", "bootstrap_latency_ms",
                "drop_probability", "stream_end_ms", "session"});
    ScenarioSpec spec;
    auto u = [&](const char* key, auto& out) {
      if (root.contains(key)) {
        out = static_cast<std::decay_t<decltype(out)>>(unsigned_field(root.at(key), {key}));
      }
    };
    if (root.contains("name")) spec.name = string_field(root.at("name"), {"name"});
    u("duration_ms", spec.duration_ms);
    u("seed", spec.seed);
    u("sources", spec.sources);
    u("fanout", spec.protocol.fanout);
    u("beacon_period_ms", spec.protocol.beacon_period);
    u("chunk_period_ms", spec.protocol.chunk_period);
    u("join_timeout_ms", spec.protocol.join_timeout);
    u("keepalive_timeout_ms", spec.protocol.keepalive_timeout);
    u("sample_period_ms", spec.sample_period_ms);
    u("bootstrap_latency_ms", spec.bootstrap_latency_ms);
    if (root.contains("alpha")) spec.protocol.decay.alpha = number_field(root.at("alpha"), {"alpha"});
    if (root.contains("drop_probability")) {
      spec.drop_probability = number_field(root.at("drop_probability"), {"drop_probability"});
    }
    if (root.contains("stream_end_ms") && !root.at("stream_end_ms").is_null()) {
      spec.stream_end_ms = unsigned_field(root.at("stream_end_ms"), {"stream_end_ms"});
    }
    // Keepalives go out three times per timeout window.
    spec.protocol.keepalive_period = std::max<Millis>(1, spec.protocol.keepalive_timeout / 3);

    if (root.contains("peers")) parse_peers(root.at("peers"), spec);
    if (root.contains("latency")) parse_latency(root.at("latency"), spec);
    if (root.contains("churn")) parse_churn(root.at("churn"), spec);
    if (root.contains("flash_crowd")) parse_flash_crowd(root.at("flash_crowd"), spec);
    if (root.contains("protocol")) parse_protocol(root.at("protocol"), spec);
    if (root.contains("session")) parse_session(root.at("session"), spec);

    check(spec);
    return spec;
  }

  void parse_peers(const json& p, ScenarioSpec& spec) const {
    const std::vector<std::string> path{"peers"};
    check_keys(p, path, {"count", "mix", "malicious_strategy", "join_window_ms"});
    if (p.contains("count")) spec.peer_count = unsigned_field(p.at("count"), extend(path, "count"));
    if (p.contains("mix")) spec.mix = mix(p.at("mix"), extend(path, "mix"));
    if (p.contains("join_window_ms")) {
      spec.join_window_ms = unsigned_field(p.at("join_window_ms"), extend(path, "join_window_ms"));
    }
    if (p.contains("malicious_strategy")) {
      const auto where = extend(path, "malicious_strategy");
      const auto s = string_field(p.at("malicious_strategy"), where);
      if (s == "always_zero") {
        spec.malicious_strategy = ReportStrategy::AlwaysZero;
      } else if (s == "always_one") {
        spec.malicious_strategy = ReportStrategy::AlwaysOne;
      } else if (s == "invert") {
        spec.malicious_strategy = ReportStrategy::Invert;
      } else {
        fail(where, "expected always_zero, always_one or invert");
      }
    }
  }

  void parse_latency(const json& l, ScenarioSpec& spec) const {
    const std::vector<std::string> path{"latency"};
    check_keys(l, path, {"mode", "min_ms", "max_ms", "matrix", "positions", "ms_per_unit"});
    auto& lat = spec.latency;
    const std::string mode =
        l.contains("mode") ? string_field(l.at("mode"), extend(path, "mode")) : "uniform";
    if (mode == "uniform") {
      lat.mode = LatencyMode::Uniform;
    } else if (mode == "matrix") {
      lat.mode = LatencyMode::Matrix;
    } else if (mode == "coordinates") {
      lat.mode = LatencyMode::Coordinates;
    } else {
      fail(extend(path, "mode"), "expected uniform, matrix or coordinates");
    }
    if (l.contains("min_ms")) lat.min_ms = unsigned_field(l.at("min_ms"), extend(path, "min_ms"));
    if (l.contains("max_ms")) lat.max_ms = unsigned_field(l.at("max_ms"), extend(path, "max_ms"));
    if (l.contains("ms_per_unit")) {
      lat.ms_per_unit = number_field(l.at("ms_per_unit"), extend(path, "ms_per_unit"));
    }
    if (l.contains("matrix")) {
      const auto where = extend(path, "matrix");
      const auto& m = l.at("matrix");
      if (!m.is_array()) fail(where, "expected an array of rows");
      for (const auto& row : m) {
        if (!row.is_array()) fail(where, "expected an array of rows");
        std::vector<Millis> r;
        for (const auto& cell : row) r.push_back(unsigned_field(cell, where));
        lat.matrix.push_back(std::move(r));
      }
    }
    if (l.contains("positions")) {
      const auto where = extend(path, "positions");
      const auto& ps = l.at("positions");
      if (!ps.is_array()) fail(where, "expected an array of [x, y] pairs");
      for (const auto& pt : ps) {
        if (!pt.is_array() || pt.size() != 2) fail(where, "expected an array of [x, y] pairs");
        lat.positions.emplace_back(number_field(pt[0], where), number_field(pt[1], where));
      }
    }
  }

  void parse_churn(const json& c, ScenarioSpec& spec) const {
    const std::vector<std::string> path{"churn"};
    check_keys(c, path, {"arrivals", "departures"});
    if (c.contains("arrivals")) {
      const auto where = extend(path, "arrivals");
      if (!c.at("arrivals").is_array()) fail(where, "expected an array");
      for (const auto& a : c.at("arrivals")) {
        check_keys(a, where, {"at_ms", "count", "mix"});
        ArrivalSpec arrival;
        arrival.mix = spec.mix;
        if (!a.contains("at_ms") || !a.contains("count")) fail(where, "at_ms and count are required");
        arrival.at_ms = unsigned_field(a.at("at_ms"), extend(where, "at_ms"));
        arrival.count = unsigned_field(a.at("count"), extend(where, "count"));
        if (a.contains("mix")) arrival.mix = mix(a.at("mix"), extend(where, "mix"));
        spec.arrivals.push_back(arrival);
      }
    }
    if (c.contains("departures")) {
      const auto where = extend(path, "departures");
      if (!c.at("departures").is_array()) fail(where, "expected an array");
      for (const auto& d : c.at("departures")) {
        check_keys(d, where, {"at_ms", "rule", "count", "fraction"});
        DepartureSpec dep;
        if (!d.contains("at_ms") || !d.contains("rule")) fail(where, "at_ms and rule are required");
        dep.at_ms = unsigned_field(d.at("at_ms"), extend(where, "at_ms"));
        const auto rule = string_field(d.at("rule"), extend(where, "rule"));
        if (rule == "random") {
          dep.rule = DepartureRule::Random;
        } else if (rule == "interior_fraction") {
          dep.rule = DepartureRule::InteriorFraction;
        } else if (rule == "leaf") {
          dep.rule = DepartureRule::Leaf;
        } else {
          fail(extend(where, "rule"), "expected random, interior_fraction or leaf");
        }
        if (d.contains("count")) dep.count = unsigned_field(d.at("count"), extend(where, "count"));
        if (d.contains("fraction")) {
          dep.fraction = number_field(d.at("fraction"), extend(where, "fraction"));
        }
        if (dep.rule == DepartureRule::InteriorFraction && !(dep.fraction > 0.0 && dep.fraction <= 1.0)) {
          fail(extend(where, "fraction"), "interior_fraction needs a fraction in (0,1]");
        }
        if (dep.rule != DepartureRule::InteriorFraction && dep.count == 0) {
          fail(extend(where, "count"), "count must be positive");
        }
        spec.departures.push_back(dep);
      }
    }
  }

  void parse_flash_crowd(const json& f, ScenarioSpec& spec) const {
    if (f.is_null()) return;
    const std::vector<std::string> path{"flash_crowd"};
    check_keys(f, path, {"at_ms", "count", "mix"});
    if (!f.contains("at_ms") || !f.contains("count")) fail(path, "at_ms and count are required");
    FlashCrowdSpec fc;
    fc.mix = spec.mix;
    fc.at_ms = unsigned_field(f.at("at_ms"), extend(path, "at_ms"));
    fc.count = unsigned_field(f.at("count"), extend(path, "count"));
    if (f.contains("mix")) fc.mix = mix(f.at("mix"), extend(path, "mix"));
    spec.flash_crowd = fc;
  }

  void parse_protocol(const json& p, ScenarioSpec& spec) const {
    const std::vector<std::string> path{"protocol"};
    check_keys(p, path,
               {"report_every_chunks", "climb_period_ms", "audit_tolerance", "audit_penalty",
                "query_timeout_ms", "maintenance_period_ms", "parent_timeout_ms",
                "keepalive_period_ms", "rt_refresh_period_ms", "brt_window_beacons",
                "max_join_attempts", "initial_reputation"});
    auto& cfg = spec.protocol;
    auto u = [&](const char* key, auto& out) {
      if (p.contains(key)) {
        out = static_cast<std::decay_t<decltype(out)>>(unsigned_field(p.at(key), extend(path, key)));
      }
    };
    auto d = [&](const char* key, double& out) {
      if (p.contains(key)) out = number_field(p.at(key), extend(path, key));
    };
    u("report_every_chunks", cfg.report_every_chunks);
    u("climb_period_ms", cfg.climb_period);
    u("query_timeout_ms", cfg.query_timeout);
    u("maintenance_period_ms", cfg.maintenance_period);
    u("parent_timeout_ms", cfg.parent_timeout);
    u("keepalive_period_ms", cfg.keepalive_period);
    u("rt_refresh_period_ms", cfg.rt_refresh_period);
    u("brt_window_beacons", cfg.brt_window_beacons);
    u("max_join_attempts", cfg.max_join_attempts);
    d("audit_tolerance", cfg.audit_tolerance);
    d("audit_penalty", cfg.audit_penalty);
    d("initial_reputation", cfg.initial_reputation);
  }

  void parse_session(const json& s, ScenarioSpec& spec) const {
    const std::vector<std::string> path{"session"};
    check_keys(s, path, {"title", "speaker", "date", "time"});
    auto get = [&](const char* key, std::string& out) {
      if (s.contains(key)) out = string_field(s.at(key), extend(path, key));
    };
    get("title", spec.session.title);
    get("speaker", spec.session.speaker);
    get("date", spec.session.date);
    get("time", spec.session.time);
  }

  void check(const ScenarioSpec& spec) const {
    try {
      validate_scenario(spec);
    } catch (const Error& e) {
      // validate_scenario reports "field: message"; recover the line from the field path.
      const std::string what = e.what();
      const auto colon = what.find(':');
      std::vector<std::string> path;
      if (colon != std::string::npos) {
        std::string field = what.substr(0, colon);
        std::size_t start = 0;
        while (start <= field.size()) {
          const auto dot = field.find('.', start);
          path.push_back(field.substr(start, dot - start));
          if (dot == std::string::npos) break;
          start = dot + 1;
        }
        fail(path, what.substr(colon + 2));
      }
      throw;
    }
  }

 private:
  Locator locator_;
};

[[noreturn]] void invalid(const std::string& field, const std::string& what) {
  throw Error(ErrorCode::InvalidScenario, field + ": " + what);
}

}  // namespace

std::size_t ScenarioSpec::total_subscribers() const noexcept {
  std::size_t n = peer_count;
  for (const auto& a : arrivals) n += a.count;
  if (flash_crowd) n += flash_crowd->count;
  return n;
}

void validate_scenario(const ScenarioSpec& spec) {
  if (spec.sources != 1) invalid("sources", "exactly one source is required");
  if (spec.duration_ms == 0) invalid("duration_ms", "must be positive");
  const auto& p = spec.protocol;
  if (p.fanout == 0) invalid("fanout", "must be positive");
  if (!(p.decay.alpha > 0.0) || !std::isfinite(p.decay.alpha)) invalid("alpha", "must be positive");
  if (p.beacon_period == 0) invalid("beacon_period_ms", "must be positive");
  if (p.chunk_period == 0) invalid("chunk_period_ms", "must be positive");
  if (p.join_timeout == 0) invalid("join_timeout_ms", "must be positive");
  if (p.keepalive_timeout == 0) invalid("keepalive_timeout_ms", "must be positive");
  if (p.report_every_chunks == 0) invalid("protocol.report_every_chunks", "must be positive");
  if (p.climb_period == 0) invalid("protocol.climb_period_ms", "must be positive");
  if (p.query_timeout == 0) invalid("protocol.query_timeout_ms", "must be positive");
  if (p.maintenance_period == 0) invalid("protocol.maintenance_period_ms", "must be positive");
  if (p.parent_timeout == 0) invalid("protocol.parent_timeout_ms", "must be positive");
  if (p.keepalive_period == 0) invalid("protocol.keepalive_period_ms", "must be positive");
  if (p.rt_refresh_period == 0) invalid("protocol.rt_refresh_period_ms", "must be positive");
  if (p.brt_window_beacons == 0) invalid("protocol.brt_window_beacons", "must be positive");
  if (p.max_join_attempts == 0) invalid("protocol.max_join_attempts", "must be positive");
  if (!(p.audit_tolerance >= 0.0 && p.audit_tolerance <= 1.0)) {
    invalid("protocol.audit_tolerance", "must lie in [0,1]");
  }
  if (!(p.audit_penalty >= 0.0 && p.audit_penalty <= 1.0)) {
    invalid("protocol.audit_penalty", "must lie in [0,1]");
  }
  if (!(p.initial_reputation >= 0.0 && p.initial_reputation <= 1.0)) {
    invalid("protocol.initial_reputation", "must lie in [0,1]");
  }
  if (spec.sample_period_ms == 0) invalid("sample_period_ms", "must be positive");
  if (!(spec.drop_probability >= 0.0 && spec.drop_probability < 1.0)) {
    invalid("drop_probability", "must lie in [0,1)");
  }
  auto mix_ok = [](const PolicyMix& m) {
    return m.altruistic >= 0 && m.free_rider >= 0 && m.malicious >= 0 &&
           std::abs(m.altruistic + m.free_rider + m.malicious - 1.0) <= 1e-9;
  };
  if (!mix_ok(spec.mix)) invalid("peers.mix", "policy fractions must be non-negative and sum to 1");

  const auto& lat = spec.latency;
  const std::size_t total = 1 + spec.total_subscribers();
  switch (lat.mode) {
    case LatencyMode::Uniform:
      if (lat.min_ms == 0) invalid("latency.min_ms", "latency must be at least 1 ms");
      if (lat.max_ms < lat.min_ms) invalid("latency.max_ms", "must not be below min_ms");
      break;
    case LatencyMode::Matrix:
      if (lat.matrix.size() < total) {
        invalid("latency.matrix", "needs one row per peer (" + std::to_string(total) + ")");
      }
      for (std::size_t i = 0; i < lat.matrix.size(); ++i) {
        if (lat.matrix[i].size() != lat.matrix.size()) invalid("latency.matrix", "must be square");
        for (std::size_t j = 0; j < lat.matrix.size(); ++j) {
          if (i != j && lat.matrix[i][j] == 0) invalid("latency.matrix", "latency must be at least 1 ms");
          if (lat.matrix[i][j] != lat.matrix[j][i]) invalid("latency.matrix", "must be symmetric");
        }
      }
      break;
    case LatencyMode::Coordinates:
      if (lat.positions.size() < total) {
        invalid("latency.positions", "needs one position per peer (" + std::to_string(total) + ")");
      }
      if (!(lat.ms_per_unit > 0.0)) invalid("latency.ms_per_unit", "must be positive");
      break;
  }

  for (const auto& a : spec.arrivals) {
    if (a.at_ms >= spec.duration_ms) invalid("churn.arrivals.at_ms", "outside the scenario duration");
    if (!mix_ok(a.mix)) invalid("churn.arrivals.mix", "policy fractions must sum to 1");
  }
  for (const auto& d : spec.departures) {
    if (d.at_ms >= spec.duration_ms) invalid("churn.departures.at_ms", "outside the scenario duration");
  }
  if (spec.flash_crowd) {
    if (spec.flash_crowd->at_ms >= spec.duration_ms) {
      invalid("flash_crowd.at_ms", "outside the scenario duration");
    }
    if (!mix_ok(spec.flash_crowd->mix)) invalid("flash_crowd.mix", "policy fractions must sum to 1");
  }
  if (spec.stream_end_ms && *spec.stream_end_ms >= spec.duration_ms) {
    invalid("stream_end_ms", "outside the scenario duration");
  }
}

ScenarioSpec parse_scenario(std::string_view text) {
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidScenario, "line " + std::to_string(line_at_offset(text, e.byte == 0 ? 0 : e.byte - 1)) +
                                                ": malformed JSON: " + e.what());
  }
  return Parser(text).parse(root);
}

ScenarioSpec load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::InvalidScenario, "cannot read scenario file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_scenario(buffer.str());
}

std::string_view to_string(LatencyMode mode) noexcept {
  switch (mode) {
    case LatencyMode::Uniform: return "uniform";
    case LatencyMode::Matrix: return "matrix";
    case LatencyMode::Coordinates: return "coordinates";
  }
  return "?";
}

std::string_view to_string(DepartureRule rule) noexcept {
  switch (rule) {
    case DepartureRule::Random: return "random";
    case DepartureRule::InteriorFraction: return "interior_fraction";
    case DepartureRule::Leaf: return "leaf";
  }
  return "?";
}

}  // namespace repstream
