#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "repstream/reputation.hpp"
#include "repstream/reputation_dht.hpp"
#include "repstream/simnet.hpp"
#include "repstream/tables.hpp"

namespace {

using namespace repstream;

void BM_Aggregate(benchmark::State& state) {
  Reputation r{0.5, 0};
  SimTime now = 0;
  const DecayParams p = default_decay();
  for (auto _ : state) {
    now += 100;
    r = aggregate(r, {PeerId{1}, 0.7, PeerId{2}, now}, now, p);
    benchmark::DoNotOptimize(r);
  }
}
BENCHMARK(BM_Aggregate);

void BM_OmtAdmit(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto fanout = static_cast<std::size_t>(state.range(0));
  OverlaidMulticastTable omt(PeerId{0}, fanout);
  std::uint64_t next = 1;
  for (auto _ : state) {
    auto d = omt.admit(PeerId{next++}, unit(rng), next);
    benchmark::DoNotOptimize(d);
  }
}
BENCHMARK(BM_OmtAdmit)->Arg(4)->Arg(16);

void BM_LocateReplicas(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::vector<PeerId> live(static_cast<std::size_t>(state.range(0)));
  for (auto& p : live) p = PeerId{rng()};
  for (auto _ : state) {
    auto set = locate_replicas(PeerId{rng()}, live);
    benchmark::DoNotOptimize(set);
  }
}
BENCHMARK(BM_LocateReplicas)->Arg(100)->Arg(1000);

void BM_Simulation(benchmark::State& state) {
  ScenarioSpec spec;
  spec.peer_count = static_cast<std::size_t>(state.range(0));
  spec.duration_ms = 20000;
  for (auto _ : state) {
    auto log = run_scenario(spec);
    benchmark::DoNotOptimize(log.trace_hash);
  }
}
BENCHMARK(BM_Simulation)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
