#include "repstream/reputation.hpp"

#include <algorithm>
#include <string>
#include <vector>

#include "repstream/error.hpp"

namespace repstream {

namespace {

bool in_unit_interval(double v) { return v >= 0.0 && v <= 1.0; }

// Shared by aggregate and decay_only so the R_r = 0 case agrees bit for bit.
double decayed_value(const Reputation& previous, SimTime now, const DecayParams& params) {
  if (now < previous.updated_at) {
    throw Error(ErrorCode::ClockViolation,
                "reputation update at " + std::to_string(now) + " precedes last update at " +
                    std::to_string(previous.updated_at));
  }
  if (!in_unit_interval(previous.value)) {
    throw Error(ErrorCode::InvalidArgument, "stored reputation outside [0,1]");
  }
  const double tau = static_cast<double>(now - previous.updated_at);
  return previous.value * std::exp(-params.alpha * tau);
}

}  // namespace

void DecayParams::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw Error(ErrorCode::InvalidArgument, "decay alpha must be a positive finite rate");
  }
}

DecayParams DecayParams::per_round(double retained, Millis round) {
  if (!(retained > 0.0 && retained < 1.0) || round == 0) {
    throw Error(ErrorCode::InvalidArgument, "per-round retention must lie in (0,1)");
  }
  return DecayParams{-std::log(retained) / static_cast<double>(round)};
}

DecayParams default_decay() { return DecayParams::per_round(0.9, 1000); }

Reputation aggregate(const Reputation& previous, const RepReport& report, SimTime now,
                     const DecayParams& params) {
  if (!in_unit_interval(report.reported_value)) {
    throw Error(ErrorCode::InvalidArgument, "reported reputation outside [0,1]");
  }
  const double decayed = decayed_value(previous, now, params);
  const double r = report.reported_value;
  return Reputation{(decayed + r) / (1.0 + r), now};
}

Reputation decay_only(const Reputation& previous, SimTime now, const DecayParams& params) {
  return Reputation{decayed_value(previous, now, params), now};
}

double fixed_point(double report_value, double decay_per_round) {
  if (!in_unit_interval(report_value) || !(decay_per_round > 0.0 && decay_per_round <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "fixed_point needs R_r in [0,1] and d in (0,1]");
  }
  const double denominator = 1.0 + report_value - decay_per_round;
  if (!(denominator > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "non-contractive update: 1 + R_r - d <= 0");
  }
  return report_value / denominator;
}

double resolve_replicas(std::span<const double> values, std::size_t expected_count) {
  if (values.empty()) {
    throw Error(ErrorCode::NoData, "no replica answered");
  }
  if (values.size() > expected_count) {
    throw Error(ErrorCode::InvalidArgument, "more replica answers than replicas");
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return sorted[(sorted.size() - 1) / 2];
}

}  // namespace repstream
