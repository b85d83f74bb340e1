#pragma once

#include <cstddef>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "repstream/ids.hpp"

namespace repstream {

inline constexpr std::size_t kRoutingTableCapacity = 120;
inline constexpr std::size_t kNeighbourTableCapacity = 16;
inline constexpr std::size_t kBroadcastTableCapacity = 3;
inline constexpr std::size_t kGrandparentCapacity = 4;
inline constexpr std::size_t kSiblingCapacity = 8;

/// DHT membership for one layer; at most 120 ids, never the owner.
class RoutingTable {
 public:
  explicit RoutingTable(PeerId owner) : owner_(owner) {}

  /// Union with `incoming`. Existing entries are kept first; new ones are admitted in
  /// ascending circular distance from the owner until the table is full.
  void merge(std::span<const PeerId> incoming);
  bool remove(PeerId id);

  bool contains(PeerId id) const;
  const std::vector<PeerId>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  PeerId owner() const noexcept { return owner_; }

 private:
  PeerId owner_;
  std::vector<PeerId> entries_;
};

struct NeighbourEntry {
  PeerId id;
  Millis rtt = 0;

  friend bool operator==(const NeighbourEntry&, const NeighbourEntry&) = default;
};

/// The 16 lowest-RTT peers, ascending by (rtt, id).
class NeighbourTable {
 public:
  explicit NeighbourTable(PeerId owner) : owner_(owner) {}

  void update(PeerId candidate, Millis rtt);
  bool remove(PeerId id);

  bool contains(PeerId id) const;
  const std::vector<NeighbourEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  PeerId owner_;
  std::vector<NeighbourEntry> entries_;
};

struct BeaconSource {
  PeerId id;
  double consistency = 0.0;  // beacons seen inside the trailing window
};

/// Top three beacon providers ranked by trailing-window beacon count.
class BroadcastRoutingTable {
 public:
  explicit BroadcastRoutingTable(PeerId owner) : owner_(owner) {}

  void record_beacon(PeerId from, SimTime now, Millis window);
  /// Drops beacons outside (now - window, now] and re-ranks.
  void refresh(SimTime now, Millis window);
  void remove(PeerId id);

  const std::vector<BeaconSource>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::optional<PeerId> best() const;

 private:
  void rerank();

  PeerId owner_;
  std::map<PeerId, std::deque<SimTime>> history_;
  std::vector<BeaconSource> entries_;
};

struct ChildEntry {
  PeerId id;
  double reputation = 0.0;  // snapshot at admission, refreshed on keepalives
  SimTime last_keepalive = 0;
  SimTime admitted_at = 0;
  double penalty = 0.0;     // set by reporter audits

  double effective_reputation() const noexcept { return reputation - penalty; }
};

namespace admit {
struct Accept {};
struct RejectFull {
  std::vector<PeerId> children;
};
struct Replace {
  PeerId evicted;
  std::vector<PeerId> evicted_gets;  // remaining children, offered to the evicted peer as feeders
};
}  // namespace admit

using AdmitDecision = std::variant<admit::Accept, admit::RejectFull, admit::Replace>;

/// One parent, at most `fanout` children.
class OverlaidMulticastTable {
 public:
  /// Throws Error(InvalidArgument) when fanout == 0.
  OverlaidMulticastTable(PeerId owner, std::size_t fanout);

  /// Decide on a join request from a peer that is neither a child, the parent nor the owner.
  /// Full table: the weakest child (lowest effective reputation, then larger circular distance
  /// from the owner, then larger id) is replaced only if `requester_rep` beats it.
  AdmitDecision admit(PeerId requester, double requester_rep, SimTime now);

  /// Removes and returns children whose last keepalive is older than `timeout`.
  std::vector<PeerId> sweep(SimTime now, Millis timeout);

  bool touch(PeerId child, SimTime now);
  bool remove_child(PeerId child);
  bool set_child_reputation(PeerId child, double reputation);
  bool set_child_penalty(PeerId child, double penalty);

  /// Throws Error(InvalidArgument) if the parent would also be a child or the owner.
  void set_parent(std::optional<PeerId> parent);
  std::optional<PeerId> parent() const noexcept { return parent_; }

  bool is_child(PeerId id) const;
  const ChildEntry* child(PeerId id) const;
  bool full() const noexcept { return children_.size() >= fanout_; }
  std::size_t fanout() const noexcept { return fanout_; }
  const std::vector<ChildEntry>& children() const noexcept { return children_; }
  /// Child ids, most recently heard first.
  std::vector<PeerId> child_ids() const;
  std::optional<double> min_child_reputation() const;

 private:
  std::vector<ChildEntry>::iterator weakest();

  PeerId owner_;
  std::size_t fanout_;
  std::optional<PeerId> parent_;
  std::vector<ChildEntry> children_;
};

/// Recovery candidates learnt from join responses: grandparents (≤4) and siblings (≤8),
/// newest first, no duplicates, never the owner.
class BackupParentsTable {
 public:
  explicit BackupParentsTable(PeerId owner) : owner_(owner) {}

  void record(std::optional<PeerId> grandparent, std::span<const PeerId> siblings);
  void remove(PeerId id);

  const std::deque<PeerId>& grandparents() const noexcept { return grandparents_; }
  const std::deque<PeerId>& siblings() const noexcept { return siblings_; }

 private:
  PeerId owner_;
  std::deque<PeerId> grandparents_;
  std::deque<PeerId> siblings_;
};

struct PeerTables {
  PeerTables(PeerId owner, std::size_t fanout)
      : rt(owner), nt(owner), brt(owner), omt(owner, fanout), bpt(owner) {}

  RoutingTable rt;
  NeighbourTable nt;
  BroadcastRoutingTable brt;
  OverlaidMulticastTable omt;
  BackupParentsTable bpt;
};

}  // namespace repstream
