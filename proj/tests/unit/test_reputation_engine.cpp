#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "repstream/error.hpp"
#include "repstream/reputation.hpp"

namespace repstream {
namespace {

// Scalar oracle in extended precision.
long double oracle(long double prev, long double rr, long double alpha_tau) {
  return (prev * std::exp(-alpha_tau) + rr) / (1.0L + rr);
}

RepReport report(double value) { return RepReport{PeerId{2}, value, PeerId{3}, 0}; }

TEST(Aggregate, ZeroElapsedZeroReport) {
  const auto r = aggregate({0.5, 100}, report(0.0), 100, default_decay());
  EXPECT_EQ(r.value, 0.5);
  EXPECT_EQ(r.updated_at, 100u);
}

TEST(Aggregate, FrozenExample) {
  // alpha * tau = 0.1 with tau = 1000 ms.
  const DecayParams p{0.1 / 1000.0};
  const auto r = aggregate({0.5, 0}, report(0.8), 1000, p);
  EXPECT_NEAR(r.value, 0.6957881716766555, 1e-15);
  EXPECT_NEAR(r.value, 0.69579, 5e-6);
}

TEST(Aggregate, FullReportOnFullReputationStaysOne) {
  EXPECT_EQ(aggregate({1.0, 0}, report(1.0), 0, default_decay()).value, 1.0);
}

TEST(Aggregate, RejectsTimeTravelAndBadInputs) {
  EXPECT_THROW(aggregate({0.5, 10}, report(0.5), 9, default_decay()), Error);
  EXPECT_THROW(aggregate({0.5, 0}, report(1.2), 9, default_decay()), Error);
  EXPECT_THROW(aggregate({1.5, 0}, report(0.2), 9, default_decay()), Error);
  try {
    aggregate({0.5, 10}, report(0.5), 9, default_decay());
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ClockViolation);
  }
}

TEST(DecayOnly, BitIdenticalToZeroReport) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 5000; ++i) {
    const Reputation prev{unit(rng), rng() % 1000};
    const SimTime now = prev.updated_at + rng() % 100000;
    const DecayParams p{1e-6 + unit(rng) * 1e-3};
    EXPECT_EQ(decay_only(prev, now, p).value, aggregate(prev, report(0.0), now, p).value);
  }
}

TEST(DecayOnly, ClosedForm) {
  const DecayParams p = default_decay();
  EXPECT_DOUBLE_EQ(decay_only({0.5, 0}, 1000, p).value, 0.45);
  EXPECT_DOUBLE_EQ(decay_only({0.5, 0}, 10000, p).value, 0.5 * std::pow(0.9, 10));
}

TEST(DefaultDecay, RetainsNinetyPercentPerSecond) {
  EXPECT_NEAR(default_decay().alpha, 0.00010536051565782629, 1e-18);
  EXPECT_NEAR(std::exp(-default_decay().alpha * 1000.0), 0.9, 1e-15);
  EXPECT_THROW(DecayParams::per_round(1.0, 1000), Error);
  EXPECT_THROW((DecayParams{0.0}).validate(), Error);
}

TEST(FixedPoint, Examples) {
  EXPECT_DOUBLE_EQ(fixed_point(1.0, 1.0), 1.0);
  EXPECT_EQ(fixed_point(0.0, 0.9), 0.0);
  EXPECT_NEAR(fixed_point(1.0, 0.9), 0.9090909090909091, 1e-15);
  EXPECT_THROW(fixed_point(0.0, 1.0), Error);
}

TEST(FixedPoint, IteratedAggregateReachesPrediction) {
  // d = 0.9 per 1000 ms round, constant full report, from 0.5.
  const DecayParams p = default_decay();
  Reputation r{0.5, 0};
  for (int k = 1; k <= 1000; ++k) r = aggregate(r, report(1.0), static_cast<SimTime>(k) * 1000, p);
  EXPECT_NEAR(r.value, 1.0 / 1.1, 1e-9);
}

TEST(ResolveReplicas, LowerMedian) {
  const std::vector<double> three{0.7, 0.0, 0.7};
  EXPECT_EQ(resolve_replicas(three, 3), 0.7);
  const std::vector<double> two{0.2, 0.8};
  EXPECT_EQ(resolve_replicas(two, 3), 0.2);
  const std::vector<double> one{0.4};
  EXPECT_EQ(resolve_replicas(one, 3), 0.4);
  EXPECT_THROW(resolve_replicas(std::vector<double>{}, 3), Error);
  EXPECT_THROW(resolve_replicas(std::vector<double>{0.1, 0.2, 0.3, 0.4}, 3), Error);
}

TEST(AggregateProperty, RangePreservedOverRandomInputs) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 20000; ++i) {
    const Reputation prev{unit(rng), 0};
    const SimTime now = rng() % 1000000;
    const DecayParams p{1e-7 + unit(rng) * 1e-2};
    const double v = aggregate(prev, report(unit(rng)), now, p).value;
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(AggregateProperty, MatchesExtendedPrecisionOracle) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double prev = unit(rng);
    const double rr = unit(rng);
    const SimTime tau = rng() % 50000;
    const DecayParams p{1e-6 + unit(rng) * 1e-3};
    const double got = aggregate({prev, 0}, report(rr), tau, p).value;
    const long double want = oracle(prev, rr, static_cast<long double>(p.alpha) * tau);
    if (want == 0) {
      EXPECT_EQ(got, 0.0);
    } else {
      EXPECT_LE(std::fabs((got - want) / want), 1e-12L);
    }
  }
}

}  // namespace
}  // namespace repstream
