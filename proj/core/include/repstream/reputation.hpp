#pragma once

#include <cmath>
#include <span>

#include "repstream/ids.hpp"

namespace repstream {

inline constexpr double kInitialReputation = 0.5;

struct Reputation {
  double value = kInitialReputation;
  SimTime updated_at = 0;

  friend bool operator==(const Reputation&, const Reputation&) = default;
};

/// Exponential forgetting rate, per millisecond.
struct DecayParams {
  double alpha = 0.0;

  /// Throws Error(InvalidArgument) unless alpha > 0 and finite.
  void validate() const;

  /// alpha such that exp(-alpha * round) == retained.
  static DecayParams per_round(double retained, Millis round);
};

/// alpha giving 0.9 retention per 1000 ms round (about 1.0536e-4 per ms).
DecayParams default_decay();

struct RepReport {
  PeerId target;
  double reported_value = 0.0;  // the reporting child's reputation
  PeerId reporter;
  SimTime at = 0;
};

/// R(t) = (R(t - tau) * exp(-alpha * tau) + R_r) / (1 + R_r), tau = now - previous.updated_at.
/// Throws ClockViolation when now < previous.updated_at and InvalidArgument for a report or
/// previous value outside [0,1]. The result stays in [0,1] without clamping.
Reputation aggregate(const Reputation& previous, const RepReport& report, SimTime now,
                     const DecayParams& params);

/// Free-rider case R(t) = R(t - tau) * exp(-alpha * tau). Bit-identical to aggregate with R_r = 0.
Reputation decay_only(const Reputation& previous, SimTime now, const DecayParams& params);

/// Steady state of R = (R * d + R_r) / (1 + R_r): R* = R_r / (1 + R_r - d).
/// Throws InvalidArgument when 1 + R_r - d <= 0 or inputs are out of range.
double fixed_point(double report_value, double decay_per_round);

/// Lower median of the replica answers. Throws NoData on an empty span and InvalidArgument
/// when more values than expected_count are supplied.
double resolve_replicas(std::span<const double> values, std::size_t expected_count);

}  // namespace repstream
