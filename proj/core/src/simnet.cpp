#include "repstream/simnet.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "repstream/error.hpp"

namespace repstream {

// --- event queue ------------------------------------------------------------------------------

std::uint64_t EventQueue::schedule(SimTime at, EventBody body) {
  if (at < now_) {
    throw Error(ErrorCode::ClockViolation, "event scheduled at " + std::to_string(at) +
                                               " before current time " + std::to_string(now_));
  }
  const std::uint64_t seq = next_seq_++;
  heap_.push(Event{at, seq, std::move(body)});
  return seq;
}

Event EventQueue::pop() {
  if (heap_.empty()) throw Error(ErrorCode::NoData, "event queue is empty");
  Event e = heap_.top();
  heap_.pop();
  now_ = e.at;
  return e;
}

std::string describe(const Event& event) {
  std::ostringstream os;
  os << "t=" << event.at << " seq=" << event.seq << ' ';
  std::visit(
      [&](const auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, ev::Deliver>) {
          os << "Deliver " << to_string(b.message.kind()) << ' ' << to_string(b.message.sender())
             << "->" << to_string(b.message.receiver());
        } else if constexpr (std::is_same_v<T, ev::TimerFire>) {
          os << "TimerFire " << to_string(b.timer) << " at " << to_string(b.peer);
        } else if constexpr (std::is_same_v<T, ev::PeerJoin>) {
          os << "PeerJoin " << to_string(b.peer);
        } else if constexpr (std::is_same_v<T, ev::PeerLeave>) {
          os << "PeerLeave " << to_string(b.peer);
        } else if constexpr (std::is_same_v<T, ev::Departure>) {
          os << "Departure #" << b.index;
        } else if constexpr (std::is_same_v<T, ev::BootstrapReply>) {
          os << "BootstrapReply " << to_string(b.peer);
        } else if constexpr (std::is_same_v<T, ev::Sample>) {
          os << "Sample";
        } else if constexpr (std::is_same_v<T, ev::SourceEnd>) {
          os << "SourceEnd";
        } else {
          os << "ScenarioEnd";
        }
      },
      event.body);
  return os.str();
}

// --- randomness -------------------------------------------------------------------------------

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  if (bound == 0) throw Error(ErrorCode::InvalidArgument, "uniform_below needs a positive bound");
  // High 64 bits of draw * bound.
  const std::uint64_t x = rng();
  const std::uint64_t x_lo = x & 0xffffffffULL, x_hi = x >> 32;
  const std::uint64_t b_lo = bound & 0xffffffffULL, b_hi = bound >> 32;
  const std::uint64_t lo_lo = x_lo * b_lo;
  const std::uint64_t mid1 = x_hi * b_lo + (lo_lo >> 32);
  const std::uint64_t mid2 = x_lo * b_hi + (mid1 & 0xffffffffULL);
  return x_hi * b_hi + (mid1 >> 32) + (mid2 >> 32);
}

double uniform_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// --- latency ----------------------------------------------------------------------------------

LatencyModel::LatencyModel(LatencySpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {}

Millis LatencyModel::latency(std::size_t a, std::size_t b) const {
  const std::size_t lo = std::min(a, b);
  const std::size_t hi = std::max(a, b);
  Millis value = 1;
  switch (spec_.mode) {
    case LatencyMode::Uniform: {
      Fnv1a h;
      h.update_u64(seed_).update_u64(lo).update_u64(hi);
      value = spec_.min_ms + h.digest() % (spec_.max_ms - spec_.min_ms + 1);
      break;
    }
    case LatencyMode::Matrix:
      if (hi >= spec_.matrix.size()) throw Error(ErrorCode::InvalidArgument, "peer outside latency matrix");
      value = spec_.matrix[lo][hi];
      break;
    case LatencyMode::Coordinates: {
      if (hi >= spec_.positions.size()) {
        throw Error(ErrorCode::InvalidArgument, "peer without a latency position");
      }
      const auto [x1, y1] = spec_.positions[lo];
      const auto [x2, y2] = spec_.positions[hi];
      value = static_cast<Millis>(std::llround(std::hypot(x1 - x2, y1 - y2) * spec_.ms_per_unit));
      break;
    }
  }
  return std::max<Millis>(1, value);
}

Millis LatencyModel::max_latency(std::size_t peers) const {
  if (spec_.mode == LatencyMode::Uniform) return std::max<Millis>(1, spec_.max_ms);
  Millis best = 1;
  for (std::size_t a = 0; a < peers; ++a) {
    for (std::size_t b = a + 1; b < peers; ++b) best = std::max(best, latency(a, b));
  }
  return best;
}

// --- bootstrap --------------------------------------------------------------------------------

void BootstrapRegistry::add_member(PeerId peer) { members_.insert(peer); }
void BootstrapRegistry::remove_member(PeerId peer) { members_.erase(peer); }

std::vector<PeerId> BootstrapRegistry::sample(PeerId requester, std::mt19937_64& rng,
                                              std::size_t cap) const {
  std::vector<PeerId> pool;
  pool.reserve(members_.size());
  for (PeerId p : members_) {
    if (p != requester) pool.push_back(p);
  }
  const std::size_t n = std::min(cap, pool.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + uniform_below(rng, pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(n);
  return pool;
}

// --- counters ---------------------------------------------------------------------------------

std::uint64_t MessageCounters::total(const std::array<std::uint64_t, kMessageKindCount>& a) const {
  std::uint64_t sum = 0;
  for (auto v : a) sum += v;
  return sum;
}

bool MessageCounters::reconciles() const {
  return total(sent) == total(delivered) + total(dropped_departure) + total(lost) + in_flight;
}

// --- simulator --------------------------------------------------------------------------------

PeerId Simulator::peer_id_for(std::uint64_t seed, std::size_t index) {
  Fnv1a h;
  h.update("peer").update_u64(seed).update_u64(index);
  return PeerId{h.digest()};
}

Simulator::Simulator(ScenarioSpec spec)
    : spec_(std::move(spec)),
      stream_(spec_.session.stream_id()),
      rng_(spec_.seed),
      churn_rng_(spec_.seed ^ 0x9e3779b97f4a7c15ULL) {
  validate_scenario(spec_);
  latency_ = LatencyModel(spec_.latency, spec_.seed);
  plan_population();
  log_.max_latency_ms = latency_.max_latency(slots_.size());
}

Simulator::~Simulator() = default;

Simulator::PeerSlot& Simulator::add_slot(PeerRole role, BehaviorPolicy policy) {
  PeerSlot slot;
  slot.index = slots_.size();
  slot.id = peer_id_for(spec_.seed, slot.index);
  slot.role = role;
  slot.policy = policy;
  index_of_.emplace(slot.id, slot.index);
  slots_.push_back(std::move(slot));
  return slots_.back();
}

std::vector<BehaviorPolicy> Simulator::draw_policies(std::size_t count, const PolicyMix& mix) {
  const auto free = static_cast<std::size_t>(std::llround(static_cast<double>(count) * mix.free_rider));
  const auto bad = std::min(count - std::min(free, count),
                            static_cast<std::size_t>(std::llround(static_cast<double>(count) * mix.malicious)));
  std::vector<BehaviorPolicy> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (i < free) {
      out.push_back(BehaviorPolicy::free_rider());
    } else if (i < free + bad) {
      out.push_back(BehaviorPolicy::malicious(spec_.malicious_strategy));
    } else {
      out.push_back(BehaviorPolicy::altruistic());
    }
  }
  for (std::size_t i = out.size(); i > 1; --i) {
    std::swap(out[i - 1], out[uniform_below(rng_, i)]);
  }
  return out;
}

void Simulator::plan_population() {
  source_id_ = add_slot(PeerRole::Source, BehaviorPolicy::altruistic()).id;
  queue_.schedule(0, ev::PeerJoin{source_id_});

  for (const auto& policy : draw_policies(spec_.peer_count, spec_.mix)) {
    const PeerId id = add_slot(PeerRole::Subscriber, policy).id;
    const SimTime at = spec_.join_window_ms == 0 ? 0 : uniform_below(rng_, spec_.join_window_ms + 1);
    queue_.schedule(at, ev::PeerJoin{id});
  }
  for (const auto& a : spec_.arrivals) {
    for (const auto& policy : draw_policies(a.count, a.mix)) {
      queue_.schedule(a.at_ms, ev::PeerJoin{add_slot(PeerRole::Subscriber, policy).id});
    }
  }
  if (spec_.flash_crowd) {
    for (const auto& policy : draw_policies(spec_.flash_crowd->count, spec_.flash_crowd->mix)) {
      queue_.schedule(spec_.flash_crowd->at_ms, ev::PeerJoin{add_slot(PeerRole::Subscriber, policy).id});
    }
  }
  for (std::size_t i = 0; i < spec_.departures.size(); ++i) {
    queue_.schedule(spec_.departures[i].at_ms, ev::Departure{i});
  }
  if (spec_.stream_end_ms) queue_.schedule(*spec_.stream_end_ms, ev::SourceEnd{});
  queue_.schedule(0, ev::Sample{});
  queue_.schedule(spec_.duration_ms, ev::ScenarioEnd{});
}

Simulator::PeerSlot* Simulator::slot(PeerId id) {
  auto it = index_of_.find(id);
  return it == index_of_.end() ? nullptr : &slots_[it->second];
}

const Simulator::PeerSlot* Simulator::slot(PeerId id) const {
  auto it = index_of_.find(id);
  return it == index_of_.end() ? nullptr : &slots_[it->second];
}

const PeerNode* Simulator::node(PeerId id) const {
  const PeerSlot* s = slot(id);
  return s == nullptr ? nullptr : s->node.get();
}

std::vector<PeerId> Simulator::live_peers() const { return {live_.begin(), live_.end()}; }

// --- environment ------------------------------------------------------------------------------

std::vector<PeerId> Simulator::compute_holders(PeerId subject) const {
  std::vector<PeerId> others;
  others.reserve(live_.size());
  for (PeerId p : live_) {
    if (p != subject) others.push_back(p);
  }
  if (others.empty()) return {};
  return locate_replicas(subject, others).holders;
}

std::vector<PeerId> Simulator::replica_holders(PeerId subject) const {
  auto it = holders_.find(subject);
  if (it != holders_.end()) return it->second;
  return compute_holders(subject);
}

std::optional<double> Simulator::lookup_reputation(PeerId subject, SimTime now) const {
  const auto holders = replica_holders(subject);
  if (holders.empty()) return std::nullopt;
  std::vector<std::optional<double>> answers;
  for (PeerId h : holders) {
    const PeerSlot* s = slot(h);
    if (s == nullptr || !s->live) {
      answers.emplace_back();
      continue;
    }
    const auto honest = s->node->replicas().answer(subject, now, spec_.protocol.decay);
    answers.push_back(honest ? std::optional<double>(s->policy.report(*honest)) : std::nullopt);
  }
  return combine_answers(answers);
}

std::optional<double> Simulator::honest_reputation(PeerId subject) const {
  const auto holders = replica_holders(subject);
  std::vector<double> values;
  for (PeerId h : holders) {
    const PeerSlot* s = slot(h);
    if (s == nullptr || !s->live) continue;
    if (const auto v = s->node->replicas().answer(subject, now(), spec_.protocol.decay)) {
      values.push_back(*v);
    }
  }
  if (values.empty()) return std::nullopt;
  return resolve_replicas(values, kReplicaCount);
}

const RepRecord* Simulator::primary_record(PeerId subject) const {
  const auto holders = replica_holders(subject);
  if (holders.empty()) return nullptr;
  const PeerSlot* s = slot(holders.front());
  if (s == nullptr || !s->live) return nullptr;
  return s->node->replicas().find(subject);
}

Millis Simulator::rtt(PeerId a, PeerId b) const {
  const PeerSlot* sa = slot(a);
  const PeerSlot* sb = slot(b);
  if (sa == nullptr || sb == nullptr) return 2 * log_.max_latency_ms;
  return 2 * latency_.latency(sa->index, sb->index);
}

// --- membership -------------------------------------------------------------------------------

void Simulator::membership_changed() {
  const SimTime t = now();
  const auto& decay = spec_.protocol.decay;

  for (auto it = holders_.begin(); it != holders_.end();) {
    if (live_.contains(it->first)) {
      ++it;
      continue;
    }
    for (PeerId h : it->second) {
      if (PeerSlot* s = slot(h); s != nullptr && s->live) s->node->replicas().erase(it->first);
    }
    it = holders_.erase(it);
  }

  for (PeerId subject : live_) {
    const auto fresh = compute_holders(subject);
    auto existing = holders_.find(subject);
    if (existing != holders_.end() && existing->second == fresh) continue;
    const std::vector<PeerId> old = existing == holders_.end() ? std::vector<PeerId>{} : existing->second;
    const bool pinned = subject == source_id_;

    std::vector<double> surviving;
    const RepRecord* template_record = nullptr;
    for (PeerId h : old) {
      const PeerSlot* s = slot(h);
      if (s == nullptr || !s->live) continue;
      if (const RepRecord* r = s->node->replicas().find(subject)) {
        surviving.push_back(read_record(*r, t, decay));
        if (template_record == nullptr) template_record = r;
      }
    }
    RepRecord seed_record;
    seed_record.subject = subject;
    seed_record.pinned = pinned;
    if (pinned) {
      seed_record.reputation = Reputation{1.0, t};
    } else if (surviving.empty()) {
      seed_record.reputation = Reputation{spec_.protocol.initial_reputation, t};
    } else {
      seed_record.reputation = Reputation{resolve_replicas(surviving, kReplicaCount), t};
      seed_record.last_reporters = template_record->last_reporters;
    }

    for (PeerId h : fresh) {
      if (std::find(old.begin(), old.end(), h) != old.end()) continue;
      slot(h)->node->replicas().install(seed_record);
    }
    for (PeerId h : old) {
      if (std::find(fresh.begin(), fresh.end(), h) != fresh.end()) continue;
      if (PeerSlot* s = slot(h); s != nullptr && s->live) s->node->replicas().erase(subject);
    }
    holders_[subject] = fresh;
  }
}

// --- event handling ---------------------------------------------------------------------------

MetricsLog Simulator::run() {
  if (finished_) throw Error(ErrorCode::ProtocolViolation, "simulator already ran");
  while (!queue_.empty() && !finished_) {
    const Event event = queue_.pop();
    ++log_.events_processed;
    hash_event(event);
    try {
      process(event);
    } catch (const std::exception& e) {
      throw Error(ErrorCode::ProtocolViolation, "run aborted at " + describe(event) + ": " + e.what());
    }
    if (!open_orphans_.empty()) check_orphans();
  }
  if (!finished_) on_scenario_end();
  return log_;
}

void Simulator::hash_event(const Event& event) {
  Fnv1a h;
  h.update_u64(trace_).update_u64(event.at).update_u64(event.seq).update_u64(event.body.index());
  std::visit(
      [&](const auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, ev::Deliver>) {
          h.update_u64(b.message.sender().key)
              .update_u64(b.message.receiver().key)
              .update_u64(static_cast<std::uint64_t>(b.message.kind()));
        } else if constexpr (std::is_same_v<T, ev::TimerFire>) {
          h.update_u64(b.peer.key).update_u64(static_cast<std::uint64_t>(b.timer)).update_u64(b.token);
        } else if constexpr (std::is_same_v<T, ev::PeerJoin> || std::is_same_v<T, ev::PeerLeave> ||
                             std::is_same_v<T, ev::BootstrapReply>) {
          h.update_u64(b.peer.key);
        } else if constexpr (std::is_same_v<T, ev::Departure>) {
          h.update_u64(b.index);
        }
      },
      event.body);
  trace_ = h.digest();
}

void Simulator::process(const Event& event) {
  std::visit(
      [&](const auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, ev::Deliver>) {
          on_deliver(b);
        } else if constexpr (std::is_same_v<T, ev::TimerFire>) {
          on_timer(b);
        } else if constexpr (std::is_same_v<T, ev::PeerJoin>) {
          on_join(b.peer);
        } else if constexpr (std::is_same_v<T, ev::PeerLeave>) {
          on_leave(b.peer);
        } else if constexpr (std::is_same_v<T, ev::Departure>) {
          on_departure(b);
        } else if constexpr (std::is_same_v<T, ev::BootstrapReply>) {
          on_bootstrap(b.peer);
        } else if constexpr (std::is_same_v<T, ev::Sample>) {
          on_sample();
        } else if constexpr (std::is_same_v<T, ev::SourceEnd>) {
          PeerSlot* s = slot(source_id_);
          if (s != nullptr && s->live) {
            const auto before = s->node->parent();
            apply(*s, s->node->source_end(now()));
            after_handler(*s, before);
          }
        } else {
          on_scenario_end();
        }
      },
      event.body);
}

void Simulator::apply(PeerSlot& from, Actions actions) {
  const SimTime t = now();
  for (auto& a : actions) {
    std::visit(
        [&](auto& act) {
          using T = std::decay_t<decltype(act)>;
          if constexpr (std::is_same_v<T, action::Send>) {
            const auto kind = static_cast<std::size_t>(act.message.kind());
            ++log_.counters.sent[kind];
            const PeerSlot* to = slot(act.message.receiver());
            if (to == nullptr) {
              ++log_.counters.dropped_departure[kind];
              return;
            }
            if (spec_.drop_probability > 0.0 && uniform_unit(rng_) < spec_.drop_probability) {
              ++log_.counters.lost[kind];
              return;
            }
            ++log_.counters.in_flight;
            const SimTime at = t + latency_.latency(from.index, to->index);
            queue_.schedule(at, ev::Deliver{std::move(act.message), t});
          } else if constexpr (std::is_same_v<T, action::StartTimer>) {
            queue_.schedule(t + act.delay, ev::TimerFire{from.id, act.kind, act.token});
          } else if constexpr (std::is_same_v<T, action::FetchBootstrap>) {
            queue_.schedule(t + spec_.bootstrap_latency_ms, ev::BootstrapReply{from.id});
          } else if constexpr (std::is_same_v<T, action::RegisterStream>) {
            registry_.layers().register_stream(act.session.stream_id(), from.id,
                                               act.session.descriptor());
          } else if constexpr (std::is_same_v<T, action::Observe>) {
            if (act.what != action::What::UpdateApplied && act.what != action::What::UpdateRejected) {
              return;
            }
            const PeerSlot* reporter = slot(act.other);
            if (reporter == nullptr) return;
            auto& [total, included] = reports_[reporter->policy.kind];
            ++total;
            if (act.what == action::What::UpdateApplied) ++included;
          }
        },
        a);
  }
}

void Simulator::after_handler(PeerSlot& s, std::optional<PeerId> parent_before) {
  const PeerNode& n = *s.node;
  const std::size_t children = n.tables().omt.children().size();
  log_.max_children_seen = std::max(log_.max_children_seen, children);
  if (children > spec_.protocol.fanout) {
    log_.snapshot_violations.push_back("t=" + std::to_string(now()) + " fan-out exceeded at " +
                                       to_string(s.id));
  }
  if (n.parent() == parent_before) return;
  // Parent changed: walk the believed chain looking for a loop back to this peer.
  std::optional<PeerId> cur = n.parent();
  for (std::size_t steps = 0; cur && steps <= slots_.size(); ++steps) {
    if (*cur == s.id) {
      log_.transient_cycles.push_back("t=" + std::to_string(now()) + " cycle through " + to_string(s.id));
      break;
    }
    const PeerSlot* p = slot(*cur);
    if (p == nullptr || !p->live || !p->node) break;
    cur = p->node->parent();
  }
  if (!s.first_attached_at && connected_to_source(s.id)) s.first_attached_at = now();
}

bool Simulator::connected_to_source(PeerId peer) const {
  PeerId cur = peer;
  for (std::size_t steps = 0; steps <= slots_.size(); ++steps) {
    const PeerSlot* s = slot(cur);
    if (s == nullptr || !s->live || !s->node || s->node->departed()) return false;
    if (cur == source_id_) return true;
    const auto p = s->node->parent();
    if (!p) return false;
    const PeerSlot* ps = slot(*p);
    if (ps == nullptr || !ps->live || !ps->node || !ps->node->tables().omt.is_child(cur)) return false;
    cur = *p;
  }
  return false;
}

void Simulator::on_deliver(const ev::Deliver& d) {
  --log_.counters.in_flight;
  const auto kind = static_cast<std::size_t>(d.message.kind());
  PeerSlot* to = slot(d.message.receiver());
  if (to == nullptr || !to->live) {
    ++log_.counters.dropped_departure[kind];
    return;
  }
  ++log_.counters.delivered[kind];
  const auto before = to->node->parent();
  apply(*to, to->node->handle_message(d.message, now()));
  after_handler(*to, before);
}

void Simulator::on_timer(const ev::TimerFire& t) {
  PeerSlot* s = slot(t.peer);
  if (s == nullptr || !s->live) return;
  const auto before = s->node->parent();
  apply(*s, s->node->on_timer(t.timer, t.token, now()));
  after_handler(*s, before);
}

void Simulator::on_join(PeerId peer) {
  PeerSlot& s = *slot(peer);
  if (s.live) throw Error(ErrorCode::ProtocolViolation, "peer joined twice: " + to_string(peer));
  s.live = true;
  s.joined_at = now();
  s.node = std::make_unique<PeerNode>(s.id, s.role, s.policy, stream_, spec_.protocol,
                                      static_cast<const PeerEnvironment&>(*this));
  live_.insert(peer);
  registry_.add_member(peer);
  membership_changed();
  const auto before = s.node->parent();
  if (s.role == PeerRole::Source) {
    apply(s, s.node->source_start(spec_.session, now()));
  } else {
    apply(s, s.node->subscriber_start(now()));
  }
  after_handler(s, before);
}

void Simulator::on_leave(PeerId peer) {
  PeerSlot* s = slot(peer);
  if (s == nullptr || !s->live) return;
  s->live = false;
  s->left_at = now();
  s->node->mark_departed();
  live_.erase(peer);
  registry_.remove_member(peer);
  for (PeerId other : live_) {
    PeerSlot& o = *slot(other);
    if (o.node->parent() == peer) {
      log_.orphans.push_back(OrphanRecord{other, peer, o.policy, now(), std::nullopt});
      open_orphans_.push_back(log_.orphans.size() - 1);
    }
  }
  membership_changed();
}

bool Simulator::is_interior(PeerId id) const {
  for (PeerId other : live_) {
    if (other == id) continue;
    const PeerSlot& o = *slot(other);
    if (o.node->parent() == id) return true;
  }
  return false;
}

void Simulator::on_departure(const ev::Departure& d) {
  const DepartureSpec& dep = spec_.departures.at(d.index);
  std::vector<PeerId> pool;
  for (PeerId p : live_) {
    if (p == source_id_) continue;
    const bool interior = is_interior(p);
    if (dep.rule == DepartureRule::InteriorFraction && !interior) continue;
    if (dep.rule == DepartureRule::Leaf && interior) continue;
    pool.push_back(p);
  }
  std::size_t k = dep.count;
  if (dep.rule == DepartureRule::InteriorFraction) {
    k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(dep.fraction * static_cast<double>(pool.size()))));
  }
  k = std::min(k, pool.size());
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(pool[i], pool[i + uniform_below(churn_rng_, pool.size() - i)]);
  }
  pool.resize(k);
  for (PeerId victim : pool) on_leave(victim);
}

void Simulator::on_bootstrap(PeerId peer) {
  PeerSlot* s = slot(peer);
  if (s == nullptr || !s->live) return;
  const auto sample = registry_.sample(peer, rng_, kRoutingTableCapacity);
  std::vector<PeerId> stale;
  for (PeerId p : s->node->tables().rt.entries()) {
    if (!registry_.is_member(p)) stale.push_back(p);
  }
  for (const auto& n : s->node->tables().nt.entries()) {
    if (!registry_.is_member(n.id)) stale.push_back(n.id);
  }
  std::optional<PeerId> source;
  if (const StreamEntry* e = registry_.layers().find(stream_)) source = e->source;
  const auto before = s->node->parent();
  apply(*s, s->node->on_bootstrap(sample, stale, source, now()));
  after_handler(*s, before);
}

void Simulator::check_orphans() {
  std::vector<std::size_t> still_open;
  for (std::size_t idx : open_orphans_) {
    OrphanRecord& rec = log_.orphans[idx];
    const PeerSlot* s = slot(rec.orphan);
    if (s == nullptr || !s->live) continue;
    if (connected_to_source(rec.orphan)) {
      rec.recovered_at = now();
      continue;
    }
    still_open.push_back(idx);
  }
  open_orphans_ = std::move(still_open);
}

void Simulator::on_sample() {
  take_sample(now());
  const SimTime next = now() + spec_.sample_period_ms;
  if (next <= spec_.duration_ms) queue_.schedule(next, ev::Sample{});
}

void Simulator::take_sample(SimTime at) {
  last_sample_ = at;
  ++log_.snapshots;
  for (PeerId p : live_) {
    PeerSlot& s = *slot(p);
    const bool connected = connected_to_source(p);
    if (connected && !s.first_attached_at) s.first_attached_at = at;
    const double rep = honest_reputation(p).value_or(spec_.protocol.initial_reputation);
    log_.series.push_back({at, p, "reputation", rep});
    log_.series.push_back({at, p, "attached", connected ? 1.0 : 0.0});
    log_.series.push_back(
        {at, p, "children", static_cast<double>(s.node->tables().omt.children().size())});
    log_.series.push_back(
        {at, p, "chunks_received", static_cast<double>(s.node->chunk_stats().received)});
    if (s.role == PeerRole::Subscriber) {
      log_.topology.push_back({at, p, s.node->parent()});
    } else {
      log_.series.push_back({at, p, "beacons", static_cast<double>(s.node->beacons_emitted())});
    }
  }
  check_snapshot(at);
}

void Simulator::check_snapshot(SimTime at) {
  // Believed parent edges among live peers must form a forest.
  std::map<PeerId, int> state;  // 1 = on stack, 2 = done
  for (PeerId start : live_) {
    std::vector<PeerId> stack;
    PeerId cur = start;
    bool cycle = false;
    while (true) {
      auto it = state.find(cur);
      if (it != state.end()) {
        cycle = it->second == 1;
        break;
      }
      state[cur] = 1;
      stack.push_back(cur);
      const PeerSlot* s = slot(cur);
      const auto p = s->node->parent();
      if (!p || !live_.contains(*p)) break;
      cur = *p;
    }
    for (PeerId v : stack) state[v] = 2;
    if (cycle) {
      log_.snapshot_violations.push_back("t=" + std::to_string(at) + " cycle through " + to_string(cur));
    }
  }
  for (PeerId p : live_) {
    if (slot(p)->node->tables().omt.children().size() > spec_.protocol.fanout) {
      log_.snapshot_violations.push_back("t=" + std::to_string(at) + " fan-out exceeded at " + to_string(p));
    }
  }
}

void Simulator::on_scenario_end() {
  if (finished_) return;
  if (last_sample_ != now()) take_sample(now());
  finalize();
  finished_ = true;
}

void Simulator::finalize() {
  log_.end_time = now();
  log_.trace_hash = trace_;
  std::map<PolicyKind, std::vector<const PeerOutcome*>> by_class;
  for (const PeerSlot& s : slots_) {
    PeerOutcome o;
    o.id = s.id;
    o.index = s.index;
    o.role = s.role;
    o.policy = s.policy;
    o.joined_at = s.joined_at;
    o.left_at = s.left_at;
    o.first_attached_at = s.first_attached_at;
    if (s.node) {
      o.chunks = s.node->chunk_stats();
      if (s.live) {
        o.attached_at_end = connected_to_source(s.id);
        o.children_at_end = s.node->tables().omt.children().size();
        o.final_reputation = honest_reputation(s.id).value_or(spec_.protocol.initial_reputation);
      }
    }
    log_.peers.push_back(o);
  }
  for (const PeerOutcome& o : log_.peers) {
    if (o.role == PeerRole::Subscriber && o.joined_at <= log_.end_time) by_class[o.policy.kind].push_back(&o);
  }
  for (PolicyKind kind : {PolicyKind::Altruistic, PolicyKind::FreeRider, PolicyKind::Malicious}) {
    ClassSummary c;
    double rep_sum = 0.0;
    std::size_t detached = 0;
    std::size_t leafish = 0;
    std::size_t low = 0;
    for (const PeerOutcome* o : by_class[kind]) {
      if (!slot(o->id)->node) continue;
      ++c.peers;
      if (o->left_at) continue;
      ++c.live;
      rep_sum += o->final_reputation;
      if (!o->attached_at_end) ++detached;
      if (!o->attached_at_end || o->children_at_end == 0) ++leafish;
      if (o->final_reputation < 0.1) ++low;
    }
    if (c.live > 0) {
      const auto n = static_cast<double>(c.live);
      c.mean_final_reputation = rep_sum / n;
      c.fraction_detached = static_cast<double>(detached) / n;
      c.fraction_leaf_or_detached = static_cast<double>(leafish) / n;
      c.fraction_below_threshold = static_cast<double>(low) / n;
    }
    const auto [total, included] = reports_[kind];
    c.reports_total = total;
    c.reports_included = included;
    c.inclusion_fraction = total == 0 ? 0.0 : static_cast<double>(included) / static_cast<double>(total);
    log_.classes[kind] = c;
  }
}

MetricsLog run_scenario(const ScenarioSpec& spec) {
  Simulator sim(spec);
  return sim.run();
}

}  // namespace repstream
