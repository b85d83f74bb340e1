// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "harness/harness.hpp"
#include "repstream/reputation.hpp"
#include "repstream/reputation_dht.hpp"
#include "repstream/simnet.hpp"
#include "repstream/tables.hpp"

using namespace repstream;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1 -------------------------------------------------------------------------------------------

Outcome aggregate_oracle() {
  std::mt19937_64 rng(2026);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  long double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const double prev = unit(rng);
    const double rr = unit(rng);
    const double alpha_tau = unit(rng) * 5.0;
    const SimTime tau = 1000;
    const DecayParams p{alpha_tau / 1000.0};
    const long double decayed = static_cast<long double>(prev) * std::exp(-static_cast<long double>(p.alpha) * tau);
    const long double want_agg = (decayed + rr) / (1.0L + rr);
    const double got_agg = aggregate({prev, 0}, {PeerId{1}, rr, PeerId{2}, tau}, tau, p).value;
    const double got_decay = decay_only({prev, 0}, tau, p).value;
    worst = std::max(worst, std::fabs((got_agg - want_agg) / want_agg));
    if (decayed > 0) worst = std::max(worst, std::fabs((got_decay - decayed) / decayed));
  }
  std::size_t out_of_range = 0;
  for (int i = 0; i < 100000; ++i) {
    const DecayParams p{1e-7 + unit(rng) * 1e-2};
    const double v =
        aggregate({unit(rng), 0}, {PeerId{1}, unit(rng), PeerId{2}, 0}, rng() % 1000000, p).value;
    if (!(v >= 0.0 && v <= 1.0)) ++out_of_range;
  }
  return {worst <= 1e-12L && out_of_range == 0,
          fmt("max rel err %.3Lg over 1000 triples, %zu of 1e5 out of [0,1]", worst, out_of_range)};
}

// 2 -------------------------------------------------------------------------------------------

Outcome free_rider_decay() {
  const std::vector<double> alphas{5e-5, 1e-4, 2e-4, 4e-4};
  const auto curves = harness::run_alpha_sweep(alphas, 60000);
  double worst = 0;
  std::size_t points = 0;
  for (const auto& c : curves) {
    worst = std::max(worst, c.max_abs_deviation);
    points += c.points.size();
  }
  const auto ordering = harness::check_sweep_ordering(curves);
  return {worst < 1e-9 && !ordering && points > 0,
          fmt("max |sim - 0.5 e^-at| = %.3g over %zu samples, ordering %s", worst, points,
              ordering ? ordering->c_str() : "holds")};
}

// 3 -------------------------------------------------------------------------------------------

Outcome fixed_point_grid() {
  std::size_t worst_iters = 0;
  std::size_t failures = 0;
  for (double rr : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    for (double d : {0.5, 0.9, 0.99}) {
      const DecayParams p = DecayParams::per_round(d, 1000);
      const double target = fixed_point(rr, d);
      Reputation r{0.5, 0};
      std::size_t k = 0;
      while (std::fabs(r.value - target) > 1e-9 && k < 2000) {
        ++k;
        r = aggregate(r, {PeerId{1}, rr, PeerId{2}, 0}, static_cast<SimTime>(k) * 1000, p);
      }
      if (std::fabs(r.value - target) > 1e-9) ++failures;
      worst_iters = std::max(worst_iters, k);
    }
  }
  return {failures == 0, fmt("15 grid points, worst %zu iterations, %zu not converged", worst_iters, failures)};
}

// 4 -------------------------------------------------------------------------------------------

Outcome table_invariants() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const PeerId owner{1000};
  const std::size_t fanout = 4;
  PeerTables t(owner, fanout);
  SimTime now = 0;
  std::size_t violations = 0;
  std::size_t replaces = 0;
  std::size_t non_raising = 0;
  auto peer = [&] { return PeerId{rng() % 400}; };
  auto min_eff = [&] {
    double m = 2.0;
    for (const auto& c : t.omt.children()) m = std::min(m, c.effective_reputation());
    return m;
  };
  for (int op = 0; op < 10000; ++op) {
    now += rng() % 50;
    const PeerId p = peer();
    switch (rng() % 8) {
      case 0: {
        std::vector<PeerId> batch;
        for (int k = 0; k < 30; ++k) batch.push_back(peer());
        t.rt.merge(batch);
        break;
      }
      case 1: t.nt.update(p, rng() % 200); break;
      case 2: t.brt.record_beacon(p, now, 10000); break;
      case 3:
        if (p != owner && !t.omt.is_child(p) && t.omt.parent() != p) {
          const double before = min_eff();
          if (std::holds_alternative<admit::Replace>(t.omt.admit(p, unit(rng), now))) {
            ++replaces;
            if (!(min_eff() > before)) ++non_raising;
          }
        }
        break;
      case 4: t.omt.sweep(now, 1500); break;
      case 5:
        if (p != owner && !t.omt.is_child(p)) t.omt.set_parent(p);
        break;
      case 6: {
        std::vector<PeerId> sibs;
        for (int k = 0; k < 5; ++k) sibs.push_back(peer());
        t.bpt.record(peer(), sibs);
        break;
      }
      default:
        if (!t.omt.children().empty()) {
          t.omt.set_child_penalty(t.omt.children()[rng() % t.omt.children().size()].id,
                                  rng() % 2 ? 0.1 : 0.0);
        }
        break;
    }
    std::set<PeerId> kids;
    for (const auto& c : t.omt.children()) kids.insert(c.id);
    const bool ok = t.rt.size() <= kRoutingTableCapacity && t.nt.size() <= kNeighbourTableCapacity &&
                    t.brt.size() <= kBroadcastTableCapacity && t.omt.children().size() <= fanout &&
                    kids.size() == t.omt.children().size() &&
                    !(t.omt.parent() && kids.contains(*t.omt.parent())) && !t.rt.contains(owner) &&
                    t.bpt.grandparents().size() <= kGrandparentCapacity &&
                    t.bpt.siblings().size() <= kSiblingCapacity;
    if (!ok) ++violations;
  }
  return {violations == 0 && non_raising == 0 && replaces > 0,
          fmt("10000 ops, %zu capacity/parent violations, %zu replaces (%zu not raising the minimum)",
              violations, replaces, non_raising)};
}

// 5 -------------------------------------------------------------------------------------------

Outcome byzantine_bound() {
  std::size_t cases = 0;
  std::size_t moved = 0;
  for (int h = 0; h <= 10; ++h) {
    const double honest = h / 10.0;
    for (double adversary : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      for (std::size_t slot = 0; slot < 3; ++slot) {
        std::vector<RepRecord> recs(3, RepRecord{PeerId{5}, {honest, 0}, {}, false});
        recs[slot].reputation.value = adversary;
        const RepRecord* views[] = {&recs[0], &recs[1], &recs[2]};
        ++cases;
        if (answer_query(views, PeerId{5}, 0, default_decay()) != honest) ++moved;
      }
    }
  }
  return {moved == 0, fmt("%zu cases, %zu moved by the adversary", cases, moved)};
}

// 6 -------------------------------------------------------------------------------------------

Outcome equilibrium(const MetricsLog& log) {
  const auto& a = log.classes.at(PolicyKind::Altruistic);
  const auto& f = log.classes.at(PolicyKind::FreeRider);
  const auto& m = log.classes.at(PolicyKind::Malicious);
  std::size_t altruistic_detached = 0;
  for (const auto& p : log.peers) {
    if (p.role == PeerRole::Subscriber && p.policy.kind == PolicyKind::Altruistic && !p.left_at &&
        !p.attached_at_end) {
      ++altruistic_detached;
    }
  }
  const bool ordering = a.mean_final_reputation > m.mean_final_reputation &&
                        m.mean_final_reputation >= f.mean_final_reputation;
  const bool pass = ordering && f.mean_final_reputation < 0.1 && a.mean_final_reputation > 0.8 &&
                    altruistic_detached == 0 && f.fraction_leaf_or_detached >= 0.9;
  return {pass, fmt("mean rep altruistic %.4f malicious %.4f free-rider %.4g (ordering %s, need altruistic > 0.8, "
                    "free-rider < 0.1); altruistic detached %zu; free riders leaf-or-detached %.2f",
                    a.mean_final_reputation, m.mean_final_reputation, f.mean_final_reputation,
                    ordering ? "holds" : "violated", altruistic_detached, f.fraction_leaf_or_detached)};
}

// 7 -------------------------------------------------------------------------------------------

Outcome churn_recovery() {
  const ScenarioSpec spec = harness::churn_scenario();
  const MetricsLog log = run_scenario(spec);
  const Millis bound = 2 * spec.protocol.join_timeout + 2 * log.max_latency_ms;
  std::size_t orphans = 0;
  std::size_t late = 0;
  Millis worst = 0;
  for (const auto& o : log.orphans) {
    if (o.policy.kind != PolicyKind::Altruistic) continue;
    ++orphans;
    if (!o.recovered_at) {
      ++late;
      continue;
    }
    const Millis took = *o.recovered_at - o.orphaned_at;
    worst = std::max(worst, took);
    if (took > bound) ++late;
  }
  const bool pass = orphans > 0 && late == 0 && log.snapshot_violations.empty();
  return {pass, fmt("%zu orphans, worst recovery %llu ms (bound %llu), %zu late, %zu snapshot violations "
                    "over %zu snapshots",
                    orphans, static_cast<unsigned long long>(worst), static_cast<unsigned long long>(bound),
                    late, log.snapshot_violations.size(), log.snapshots)};
}

// 8 -------------------------------------------------------------------------------------------

Outcome determinism(const MetricsLog& first) {
  const MetricsLog again = run_scenario(harness::equilibrium_scenario(42));
  const MetricsLog other = run_scenario(harness::equilibrium_scenario(43));
  const bool pass = first.trace_hash == again.trace_hash && first.trace_hash != other.trace_hash;
  return {pass, fmt("seed 42: %s / %s, seed 43: %s", harness::hex64(first.trace_hash).c_str(),
                    harness::hex64(again.trace_hash).c_str(), harness::hex64(other.trace_hash).c_str())};
}

// 9 -------------------------------------------------------------------------------------------

Outcome flash_crowd() {
  const ScenarioSpec spec = harness::flash_crowd_scenario();
  const MetricsLog log = run_scenario(spec);
  const SimTime flash_at = spec.flash_crowd->at_ms;
  std::size_t joiners = 0;
  std::size_t slow = 0;
  Millis worst = 0;
  for (const auto& p : log.peers) {
    if (p.role != PeerRole::Subscriber || p.joined_at != flash_at || p.index <= spec.peer_count) continue;
    if (p.policy.kind != PolicyKind::Altruistic) continue;
    ++joiners;
    if (!p.first_attached_at) {
      ++slow;
      continue;
    }
    const Millis took = *p.first_attached_at - flash_at;
    worst = std::max(worst, took);
    if (took > 30000) ++slow;
  }
  const auto rejects = log.counters.sent[static_cast<std::size_t>(MessageKind::JoinReject)];
  const bool pass = joiners == spec.flash_crowd->count && slow == 0 &&
                    log.max_children_seen <= spec.protocol.fanout && log.snapshot_violations.empty();
  return {pass, fmt("%zu joiners, worst attach %llu ms after the flash, %zu over 30 s, max children %zu "
                    "(F = %zu), %llu JoinReject redirects",
                    joiners, static_cast<unsigned long long>(worst), slow, log.max_children_seen,
                    spec.protocol.fanout, static_cast<unsigned long long>(rejects))};
}

}  // namespace

int main() {
  const MetricsLog equilibrium_log = run_scenario(harness::equilibrium_scenario(42));

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"1 aggregation oracle and range", aggregate_oracle},
      {"2 free-rider decay sweep", free_rider_decay},
      {"3 fixed-point convergence", fixed_point_grid},
      {"4 table invariants", table_invariants},
      {"5 byzantine replica bound", byzantine_bound},
      {"6 equilibrium payoffs", [&] { return equilibrium(equilibrium_log); }},
      {"7 churn recovery", churn_recovery},
      {"8 determinism", [&] { return determinism(equilibrium_log); }},
      {"9 flash crowd", flash_crowd},
  };

  int failed = 0;
  for (const auto& [name, check] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s [%s] %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs);
    if (!o.pass) ++failed;
  }
  std::fflush(stdout);
  return failed == 0 ? 0 : 1;
}
