#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <tuple>
#include <vector>

#include "repstream/error.hpp"
#include "repstream/tables.hpp"

namespace repstream {
namespace {

const PeerId kOwner{1000};

std::vector<PeerId> ids(std::initializer_list<std::uint64_t> keys) {
  std::vector<PeerId> out;
  for (auto k : keys) out.push_back(PeerId{k});
  return out;
}

// --- RT ---------------------------------------------------------------------------------------

TEST(RoutingTable, MergeUnderCapacity) {
  RoutingTable rt(kOwner);
  rt.merge(ids({1, 2}));
  EXPECT_EQ(rt.size(), 2u);
  EXPECT_TRUE(rt.contains(PeerId{1}));
  EXPECT_TRUE(rt.contains(PeerId{2}));
}

TEST(RoutingTable, NeverHoldsOwner) {
  RoutingTable rt(kOwner);
  rt.merge(ids({1, 1000, 2}));
  EXPECT_FALSE(rt.contains(kOwner));
  EXPECT_EQ(rt.size(), 2u);
}

TEST(RoutingTable, FullTableRetainsOriginalsAgainstBruteForce) {
  RoutingTable rt(kOwner);
  std::vector<PeerId> first;
  for (std::uint64_t k = 0; k < 120; ++k) first.push_back(PeerId{5000 + k * 7});
  rt.merge(first);
  std::vector<PeerId> extra;
  for (std::uint64_t k = 0; k < 10; ++k) extra.push_back(PeerId{1001 + k});  // closer to owner
  rt.merge(extra);
  EXPECT_EQ(rt.size(), 120u);
  const std::set<PeerId> have(rt.entries().begin(), rt.entries().end());
  EXPECT_EQ(have, std::set<PeerId>(first.begin(), first.end()));
}

TEST(RoutingTable, NewEntriesChosenByDistanceFromOwner) {
  RoutingTable rt(kOwner);
  std::vector<PeerId> first;
  for (std::uint64_t k = 0; k < 118; ++k) first.push_back(PeerId{900000 + k});
  rt.merge(first);
  rt.merge(ids({999, 1003, 500, 1001}));
  EXPECT_EQ(rt.size(), 120u);
  EXPECT_TRUE(rt.contains(PeerId{999}));
  EXPECT_TRUE(rt.contains(PeerId{1001}));
  EXPECT_FALSE(rt.contains(PeerId{500}));
}

// --- NT ---------------------------------------------------------------------------------------

NeighbourTable full_nt() {
  NeighbourTable nt(kOwner);
  for (std::uint64_t k = 1; k <= 16; ++k) nt.update(PeerId{k}, k * 10);
  return nt;
}

TEST(NeighbourTable, LowerRttDisplacesMax) {
  auto nt = full_nt();
  nt.update(PeerId{99}, 55);
  EXPECT_TRUE(nt.contains(PeerId{99}));
  EXPECT_FALSE(nt.contains(PeerId{16}));
  EXPECT_EQ(nt.size(), 16u);
}

TEST(NeighbourTable, HigherRttRejected) {
  auto nt = full_nt();
  const auto before = nt.entries();
  nt.update(PeerId{99}, 500);
  EXPECT_FALSE(nt.contains(PeerId{99}));
  ASSERT_EQ(nt.entries().size(), before.size());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(nt.entries()[i].id, before[i].id);
}

TEST(NeighbourTable, UpsertKeepsLatestRtt) {
  NeighbourTable nt(kOwner);
  nt.update(PeerId{3}, 40);
  nt.update(PeerId{3}, 15);
  ASSERT_EQ(nt.size(), 1u);
  EXPECT_EQ(nt.entries()[0].rtt, 15u);
}

TEST(NeighbourTable, SortedByRttThenId) {
  NeighbourTable nt(kOwner);
  nt.update(PeerId{9}, 20);
  nt.update(PeerId{4}, 20);
  nt.update(PeerId{7}, 5);
  ASSERT_EQ(nt.size(), 3u);
  EXPECT_EQ(nt.entries()[0].id, PeerId{7});
  EXPECT_EQ(nt.entries()[1].id, PeerId{4});
  EXPECT_EQ(nt.entries()[2].id, PeerId{9});
}

// --- BRT --------------------------------------------------------------------------------------

TEST(BroadcastTable, CountOrder) {
  BroadcastRoutingTable brt(kOwner);
  for (SimTime t : {100, 200, 300}) brt.record_beacon(PeerId{1}, t, 10000);
  brt.record_beacon(PeerId{2}, 350, 10000);
  ASSERT_EQ(brt.size(), 2u);
  EXPECT_EQ(brt.entries()[0].id, PeerId{1});
  EXPECT_EQ(brt.best(), PeerId{1});
}

TEST(BroadcastTable, KeepsTopThree) {
  BroadcastRoutingTable brt(kOwner);
  SimTime t = 0;
  for (std::uint64_t sender = 1; sender <= 4; ++sender) {
    for (std::uint64_t k = 0; k < 5 - sender; ++k) brt.record_beacon(PeerId{sender}, ++t, 10000);
  }
  ASSERT_EQ(brt.size(), 3u);
  EXPECT_EQ(brt.entries()[0].id, PeerId{1});
  EXPECT_EQ(brt.entries()[1].id, PeerId{2});
  EXPECT_EQ(brt.entries()[2].id, PeerId{3});
}

TEST(BroadcastTable, WindowedCountsMatchBruteForceReplay) {
  std::mt19937_64 rng(21);
  const Millis window = 10000;
  BroadcastRoutingTable brt(kOwner);
  std::vector<std::pair<PeerId, SimTime>> trace;
  SimTime t = 0;
  for (int i = 0; i < 400; ++i) {
    t += rng() % 400;
    const PeerId from{1 + rng() % 6};
    brt.record_beacon(from, t, window);
    trace.emplace_back(from, t);

    std::map<PeerId, std::size_t> counts;
    for (const auto& [p, at] : trace) {
      if (at + window > t) ++counts[p];
    }
    std::vector<std::pair<PeerId, std::size_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    ranked.resize(std::min<std::size_t>(3, ranked.size()));
    ASSERT_EQ(brt.size(), ranked.size());
    for (std::size_t k = 0; k < ranked.size(); ++k) {
      EXPECT_EQ(brt.entries()[k].id, ranked[k].first);
      EXPECT_EQ(brt.entries()[k].consistency, static_cast<double>(ranked[k].second));
    }
  }
}

// --- OMT --------------------------------------------------------------------------------------

TEST(MulticastTable, AcceptsUnderCapacity) {
  OverlaidMulticastTable omt(kOwner, 3);
  omt.admit(PeerId{1}, 0.5, 0);
  omt.admit(PeerId{2}, 0.5, 0);
  EXPECT_TRUE(std::holds_alternative<admit::Accept>(omt.admit(PeerId{3}, 0.1, 0)));
  EXPECT_EQ(omt.children().size(), 3u);
}

OverlaidMulticastTable full_omt() {
  OverlaidMulticastTable omt(kOwner, 3);
  omt.admit(PeerId{1}, 0.9, 0);
  omt.admit(PeerId{2}, 0.8, 0);
  omt.admit(PeerId{3}, 0.7, 0);
  return omt;
}

TEST(MulticastTable, ReplacesWeakestWhenRequesterBeatsIt) {
  auto omt = full_omt();
  const auto d = omt.admit(PeerId{4}, 0.75, 10);
  ASSERT_TRUE(std::holds_alternative<admit::Replace>(d));
  const auto& r = std::get<admit::Replace>(d);
  EXPECT_EQ(r.evicted, PeerId{3});
  EXPECT_FALSE(omt.is_child(PeerId{3}));
  EXPECT_TRUE(omt.is_child(PeerId{4}));
  EXPECT_EQ(std::set<PeerId>(r.evicted_gets.begin(), r.evicted_gets.end()),
            (std::set<PeerId>{PeerId{1}, PeerId{2}, PeerId{4}}));
}

TEST(MulticastTable, RejectsWithChildrenWhenRequesterIsWeaker) {
  auto omt = full_omt();
  const auto d = omt.admit(PeerId{4}, 0.6, 10);
  ASSERT_TRUE(std::holds_alternative<admit::RejectFull>(d));
  const auto& c = std::get<admit::RejectFull>(d).children;
  EXPECT_EQ(std::set<PeerId>(c.begin(), c.end()), (std::set<PeerId>{PeerId{1}, PeerId{2}, PeerId{3}}));
  EXPECT_EQ(omt.children().size(), 3u);
}

TEST(MulticastTable, EqualReputationDoesNotReplace) {
  auto omt = full_omt();
  EXPECT_TRUE(std::holds_alternative<admit::RejectFull>(omt.admit(PeerId{4}, 0.7, 10)));
}

TEST(MulticastTable, WeakestTieBreaksOnDistanceThenId) {
  OverlaidMulticastTable omt(kOwner, 2);
  omt.admit(PeerId{1001}, 0.4, 0);  // distance 1
  omt.admit(PeerId{1010}, 0.4, 0);  // distance 10
  const auto d = omt.admit(PeerId{5}, 0.5, 0);
  ASSERT_TRUE(std::holds_alternative<admit::Replace>(d));
  EXPECT_EQ(std::get<admit::Replace>(d).evicted, PeerId{1010});

  OverlaidMulticastTable same(kOwner, 2);
  same.admit(PeerId{1005}, 0.4, 0);
  same.admit(PeerId{995}, 0.4, 0);  // equal distance 5, larger id loses
  EXPECT_EQ(std::get<admit::Replace>(same.admit(PeerId{5}, 0.5, 0)).evicted, PeerId{1005});
}

TEST(MulticastTable, PenaltyLowersEffectiveReputation) {
  auto omt = full_omt();
  omt.set_child_penalty(PeerId{2}, 0.2);  // 0.8 - 0.2 = 0.6 is now weakest
  const auto d = omt.admit(PeerId{4}, 0.65, 10);
  ASSERT_TRUE(std::holds_alternative<admit::Replace>(d));
  EXPECT_EQ(std::get<admit::Replace>(d).evicted, PeerId{2});
}

TEST(MulticastTable, SweepBoundary) {
  OverlaidMulticastTable omt(kOwner, 4);
  omt.admit(PeerId{1}, 0.5, 0);
  omt.admit(PeerId{2}, 0.5, 100);
  omt.set_parent(PeerId{50});
  EXPECT_TRUE(omt.sweep(1500, 1500).empty());
  const auto removed = omt.sweep(1501, 1500);
  ASSERT_EQ(removed.size(), 1u);
  EXPECT_EQ(removed[0], PeerId{1});
  EXPECT_EQ(omt.parent(), PeerId{50});
  omt.touch(PeerId{2}, 1600);
  EXPECT_TRUE(omt.sweep(3000, 1500).empty());
}

TEST(MulticastTable, GuardsParentAndChildOverlap) {
  OverlaidMulticastTable omt(kOwner, 2);
  omt.admit(PeerId{1}, 0.5, 0);
  EXPECT_THROW(omt.set_parent(PeerId{1}), Error);
  EXPECT_THROW(omt.set_parent(kOwner), Error);
  omt.set_parent(PeerId{2});
  EXPECT_THROW(omt.admit(PeerId{2}, 0.9, 0), Error);
  EXPECT_THROW(omt.admit(PeerId{1}, 0.9, 0), Error);
  EXPECT_THROW(omt.admit(kOwner, 0.9, 0), Error);
  EXPECT_THROW(OverlaidMulticastTable(kOwner, 0), Error);
}

TEST(MulticastTable, ChildIdsFreshestFirst) {
  OverlaidMulticastTable omt(kOwner, 3);
  omt.admit(PeerId{1}, 0.5, 0);
  omt.admit(PeerId{2}, 0.5, 10);
  omt.admit(PeerId{3}, 0.5, 5);
  EXPECT_EQ(omt.child_ids(), ids({2, 3, 1}));
}

// --- BPT --------------------------------------------------------------------------------------

TEST(BackupParents, GrandparentRecordedOnce) {
  BackupParentsTable bpt(kOwner);
  bpt.record(PeerId{7}, {});
  EXPECT_EQ(bpt.grandparents(), std::deque<PeerId>{PeerId{7}});
  bpt.record(PeerId{7}, {});
  EXPECT_EQ(bpt.grandparents().size(), 1u);
}

TEST(BackupParents, SiblingCapacityDropsOldest) {
  BackupParentsTable bpt(kOwner);
  bpt.record(std::nullopt, ids({1, 2, 3, 4, 5, 6, 7, 8}));
  bpt.record(std::nullopt, ids({9, 10}));
  ASSERT_EQ(bpt.siblings().size(), 8u);
  EXPECT_EQ(bpt.siblings().front(), PeerId{9});
  EXPECT_EQ(std::count(bpt.siblings().begin(), bpt.siblings().end(), PeerId{7}), 0);
  EXPECT_EQ(std::count(bpt.siblings().begin(), bpt.siblings().end(), PeerId{8}), 0);
}

TEST(BackupParents, NeverHoldsOwner) {
  BackupParentsTable bpt(kOwner);
  bpt.record(kOwner, ids({1000, 1}));
  EXPECT_TRUE(bpt.grandparents().empty());
  EXPECT_EQ(bpt.siblings(), std::deque<PeerId>{PeerId{1}});
}

// --- randomized invariants --------------------------------------------------------------------

double min_effective(const OverlaidMulticastTable& omt) {
  double m = 2.0;
  for (const auto& c : omt.children()) m = std::min(m, c.effective_reputation());
  return m;
}

TEST(TableProperty, RandomOperationSequencesKeepCapacities) {
  std::mt19937_64 rng(1234);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t fanout = 4;
  PeerTables t(kOwner, fanout);
  SimTime now = 0;
  std::size_t replaces = 0;
  auto random_peer = [&] { return PeerId{rng() % 400}; };
  for (int op = 0; op < 10000; ++op) {
    now += rng() % 50;
    const PeerId p = random_peer();
    switch (rng() % 9) {
      case 0: {
        std::vector<PeerId> batch;
        for (int k = 0; k < 30; ++k) batch.push_back(random_peer());
        t.rt.merge(batch);
        break;
      }
      case 1: t.nt.update(p, rng() % 200); break;
      case 2: t.brt.record_beacon(p, now, 10000); break;
      case 3: {
        if (p == kOwner || t.omt.is_child(p) || t.omt.parent() == p) break;
        const double before = min_effective(t.omt);
        const bool was_full = t.omt.full();
        const auto d = t.omt.admit(p, unit(rng), now);
        if (was_full) EXPECT_FALSE(std::holds_alternative<admit::Accept>(d));
        if (std::holds_alternative<admit::Replace>(d)) {
          ++replaces;
          EXPECT_GT(min_effective(t.omt), before);
        }
        break;
      }
      case 4: t.omt.sweep(now, 1500); break;
      case 5:
        if (p != kOwner && !t.omt.is_child(p)) t.omt.set_parent(p);
        break;
      case 6: {
        std::vector<PeerId> sibs;
        for (int k = 0; k < 5; ++k) sibs.push_back(random_peer());
        t.bpt.record(random_peer(), sibs);
        break;
      }
      case 7:
        if (!t.omt.children().empty()) {
          const auto& c = t.omt.children()[rng() % t.omt.children().size()];
          t.omt.set_child_penalty(c.id, rng() % 2 ? 0.1 : 0.0);
        }
        break;
      default: t.rt.remove(p); break;
    }
    ASSERT_LE(t.rt.size(), kRoutingTableCapacity);
    ASSERT_LE(t.nt.size(), kNeighbourTableCapacity);
    ASSERT_LE(t.brt.size(), kBroadcastTableCapacity);
    ASSERT_LE(t.omt.children().size(), fanout);
    ASSERT_LE(t.bpt.grandparents().size(), kGrandparentCapacity);
    ASSERT_LE(t.bpt.siblings().size(), kSiblingCapacity);
    ASSERT_FALSE(t.rt.contains(kOwner));
    if (t.omt.parent()) ASSERT_FALSE(t.omt.is_child(*t.omt.parent()));
    std::set<PeerId> unique;
    for (const auto& c : t.omt.children()) unique.insert(c.id);
    ASSERT_EQ(unique.size(), t.omt.children().size());
  }
  EXPECT_GT(replaces, 0u);
}

TEST(TableProperty, AdmitAgreesWithBruteForceWeakest) {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    OverlaidMulticastTable omt(kOwner, 3);
    std::vector<ChildEntry> mirror;
    while (mirror.size() < 3) {
      const PeerId id{rng() % 64};
      if (id == kOwner || omt.is_child(id)) continue;
      const double rep = std::round(unit(rng) * 4) / 4;  // force ties
      omt.admit(id, rep, 0);
      mirror.push_back({id, rep, 0, 0, 0.0});
    }
    const PeerId req{100 + rng() % 64};
    const double rep = std::round(unit(rng) * 4) / 4;
    auto w = std::min_element(mirror.begin(), mirror.end(), [](const auto& a, const auto& b) {
      return std::tuple{a.reputation, ~circular_distance(a.id, kOwner), ~a.id.key} <
             std::tuple{b.reputation, ~circular_distance(b.id, kOwner), ~b.id.key};
    });
    const auto d = omt.admit(req, rep, 0);
    if (rep > w->reputation) {
      ASSERT_TRUE(std::holds_alternative<admit::Replace>(d));
      EXPECT_EQ(std::get<admit::Replace>(d).evicted, w->id);
    } else {
      EXPECT_TRUE(std::holds_alternative<admit::RejectFull>(d));
    }
  }
}

}  // namespace
}  // namespace repstream
