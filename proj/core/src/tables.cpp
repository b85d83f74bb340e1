#include "repstream/tables.hpp"

#include <algorithm>
#include <tuple>
#include <unordered_set>

#include "repstream/error.hpp"

namespace repstream {

// --- RoutingTable -----------------------------------------------------------------------------

void RoutingTable::merge(std::span<const PeerId> incoming) {
  std::unordered_set<PeerId> present(entries_.begin(), entries_.end());
  std::vector<PeerId> fresh;
  for (PeerId id : incoming) {
    if (id == owner_ || present.contains(id)) continue;
    present.insert(id);
    fresh.push_back(id);
  }
  std::sort(fresh.begin(), fresh.end(), [this](PeerId a, PeerId b) {
    return std::tuple{circular_distance(owner_, a), a} < std::tuple{circular_distance(owner_, b), b};
  });
  for (PeerId id : fresh) {
    if (entries_.size() >= kRoutingTableCapacity) break;
    entries_.push_back(id);
  }
}

bool RoutingTable::remove(PeerId id) {
  auto it = std::find(entries_.begin(), entries_.end(), id);
  if (it == entries_.end()) return false;
  entries_.erase(it);
  return true;
}

bool RoutingTable::contains(PeerId id) const {
  return std::find(entries_.begin(), entries_.end(), id) != entries_.end();
}

// --- NeighbourTable ---------------------------------------------------------------------------

void NeighbourTable::update(PeerId candidate, Millis rtt) {
  if (candidate == owner_) return;
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [candidate](const NeighbourEntry& e) { return e.id == candidate; });
  if (it != entries_.end()) {
    it->rtt = rtt;
  } else {
    entries_.push_back({candidate, rtt});
  }
  std::sort(entries_.begin(), entries_.end(), [](const NeighbourEntry& a, const NeighbourEntry& b) {
    return std::tie(a.rtt, a.id) < std::tie(b.rtt, b.id);
  });
  if (entries_.size() > kNeighbourTableCapacity) entries_.resize(kNeighbourTableCapacity);
}

bool NeighbourTable::remove(PeerId id) {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [id](const NeighbourEntry& e) { return e.id == id; });
  if (it == entries_.end()) return false;
  entries_.erase(it);
  return true;
}

bool NeighbourTable::contains(PeerId id) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [id](const NeighbourEntry& e) { return e.id == id; });
}

// --- BroadcastRoutingTable --------------------------------------------------------------------

void BroadcastRoutingTable::record_beacon(PeerId from, SimTime now, Millis window) {
  if (from != owner_) history_[from].push_back(now);
  refresh(now, window);
}

void BroadcastRoutingTable::refresh(SimTime now, Millis window) {
  for (auto it = history_.begin(); it != history_.end();) {
    auto& times = it->second;
    while (!times.empty() && times.front() + window <= now) times.pop_front();
    it = times.empty() ? history_.erase(it) : std::next(it);
  }
  rerank();
}

void BroadcastRoutingTable::remove(PeerId id) {
  history_.erase(id);
  rerank();
}

void BroadcastRoutingTable::rerank() {
  entries_.clear();
  for (const auto& [id, times] : history_) {
    entries_.push_back({id, static_cast<double>(times.size())});
  }
  std::sort(entries_.begin(), entries_.end(), [](const BeaconSource& a, const BeaconSource& b) {
    if (a.consistency != b.consistency) return a.consistency > b.consistency;
    return a.id < b.id;
  });
  if (entries_.size() > kBroadcastTableCapacity) entries_.resize(kBroadcastTableCapacity);
}

std::optional<PeerId> BroadcastRoutingTable::best() const {
  if (entries_.empty()) return std::nullopt;
  return entries_.front().id;
}

// --- OverlaidMulticastTable -------------------------------------------------------------------

OverlaidMulticastTable::OverlaidMulticastTable(PeerId owner, std::size_t fanout)
    : owner_(owner), fanout_(fanout) {
  if (fanout_ == 0) throw Error(ErrorCode::InvalidArgument, "fan-out must be at least 1");
}

std::vector<ChildEntry>::iterator OverlaidMulticastTable::weakest() {
  return std::min_element(children_.begin(), children_.end(),
                          [this](const ChildEntry& a, const ChildEntry& b) {
                            const double ra = a.effective_reputation();
                            const double rb = b.effective_reputation();
                            if (ra != rb) return ra < rb;
                            const auto da = circular_distance(owner_, a.id);
                            const auto db = circular_distance(owner_, b.id);
                            if (da != db) return da > db;
                            return a.id > b.id;
                          });
}

AdmitDecision OverlaidMulticastTable::admit(PeerId requester, double requester_rep, SimTime now) {
  if (requester == owner_ || is_child(requester) || parent_ == requester) {
    throw Error(ErrorCode::InvalidArgument, "admit: requester is owner, parent or already a child");
  }
  if (children_.size() < fanout_) {
    children_.push_back({requester, requester_rep, now, now, 0.0});
    return admit::Accept{};
  }
  auto victim = weakest();
  if (requester_rep > victim->effective_reputation()) {
    const PeerId evicted = victim->id;
    *victim = ChildEntry{requester, requester_rep, now, now, 0.0};
    return admit::Replace{evicted, child_ids()};
  }
  return admit::RejectFull{child_ids()};
}

std::vector<PeerId> OverlaidMulticastTable::sweep(SimTime now, Millis timeout) {
  std::vector<PeerId> removed;
  std::erase_if(children_, [&](const ChildEntry& c) {
    const bool stale = now > c.last_keepalive && now - c.last_keepalive > timeout;
    if (stale) removed.push_back(c.id);
    return stale;
  });
  return removed;
}

bool OverlaidMulticastTable::touch(PeerId child, SimTime now) {
  for (auto& c : children_) {
    if (c.id == child) {
      c.last_keepalive = now;
      return true;
    }
  }
  return false;
}

bool OverlaidMulticastTable::remove_child(PeerId child) {
  return std::erase_if(children_, [child](const ChildEntry& c) { return c.id == child; }) > 0;
}

bool OverlaidMulticastTable::set_child_reputation(PeerId child, double reputation) {
  for (auto& c : children_) {
    if (c.id == child) {
      c.reputation = reputation;
      return true;
    }
  }
  return false;
}

bool OverlaidMulticastTable::set_child_penalty(PeerId child, double penalty) {
  for (auto& c : children_) {
    if (c.id == child) {
      c.penalty = penalty;
      return true;
    }
  }
  return false;
}

void OverlaidMulticastTable::set_parent(std::optional<PeerId> parent) {
  if (parent && (*parent == owner_ || is_child(*parent))) {
    throw Error(ErrorCode::InvalidArgument, "parent cannot be the owner or one of its children");
  }
  parent_ = parent;
}

bool OverlaidMulticastTable::is_child(PeerId id) const { return child(id) != nullptr; }

const ChildEntry* OverlaidMulticastTable::child(PeerId id) const {
  for (const auto& c : children_) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

std::vector<PeerId> OverlaidMulticastTable::child_ids() const {
  std::vector<const ChildEntry*> order;
  order.reserve(children_.size());
  for (const auto& c : children_) order.push_back(&c);
  std::sort(order.begin(), order.end(), [](const ChildEntry* a, const ChildEntry* b) {
    if (a->last_keepalive != b->last_keepalive) return a->last_keepalive > b->last_keepalive;
    return a->id < b->id;
  });
  std::vector<PeerId> ids;
  ids.reserve(order.size());
  for (const auto* c : order) ids.push_back(c->id);
  return ids;
}

std::optional<double> OverlaidMulticastTable::min_child_reputation() const {
  if (children_.empty()) return std::nullopt;
  double lowest = children_.front().effective_reputation();
  for (const auto& c : children_) lowest = std::min(lowest, c.effective_reputation());
  return lowest;
}

// --- BackupParentsTable -----------------------------------------------------------------------

void BackupParentsTable::record(std::optional<PeerId> grandparent, std::span<const PeerId> siblings) {
  if (grandparent && *grandparent != owner_) {
    std::erase(grandparents_, *grandparent);
    grandparents_.push_front(*grandparent);
    while (grandparents_.size() > kGrandparentCapacity) grandparents_.pop_back();
  }
  // Keep the carried order: the first listed sibling ends up first.
  for (auto it = siblings.rbegin(); it != siblings.rend(); ++it) {
    if (*it == owner_) continue;
    std::erase(siblings_, *it);
    siblings_.push_front(*it);
  }
  while (siblings_.size() > kSiblingCapacity) siblings_.pop_back();
}

void BackupParentsTable::remove(PeerId id) {
  std::erase(grandparents_, id);
  std::erase(siblings_, id);
}

}  // namespace repstream
