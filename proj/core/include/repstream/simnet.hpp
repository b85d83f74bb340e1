#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "repstream/ids.hpp"
#include "repstream/message.hpp"
#include "repstream/peer_node.hpp"
#include "repstream/reputation_dht.hpp"
#include "repstream/scenario.hpp"

namespace repstream {

namespace ev {
struct Deliver {
  Message message;
  SimTime sent_at = 0;
};
struct TimerFire {
  PeerId peer;
  TimerKind timer = TimerKind::Maintenance;
  std::uint64_t token = 0;
};
struct PeerJoin {
  PeerId peer;
};
/// Silent departure of one named peer.
struct PeerLeave {
  PeerId peer;
};
/// Departure batch whose victims are chosen when it fires.
struct Departure {
  std::size_t index = 0;  // into ScenarioSpec::departures
};
struct BootstrapReply {
  PeerId peer;
};
struct Sample {};
struct SourceEnd {};
struct ScenarioEnd {};
}  // namespace ev

using EventBody = std::variant<ev::Deliver, ev::TimerFire, ev::PeerJoin, ev::PeerLeave,
                               ev::Departure, ev::BootstrapReply, ev::Sample, ev::SourceEnd,
                               ev::ScenarioEnd>;

struct Event {
  SimTime at = 0;
  std::uint64_t seq = 0;
  EventBody body;
};

std::string describe(const Event& event);

/// Min-queue on (at, seq). Popping advances the clock.
class EventQueue {
 public:
  /// Throws ClockViolation when at < now(). Returns the assigned sequence number.
  std::uint64_t schedule(SimTime at, EventBody body);
  Event pop();
  bool empty() const noexcept { return heap_.empty(); }
  std::size_t size() const noexcept { return heap_.size(); }
  SimTime now() const noexcept { return now_; }
  const Event& top() const { return heap_.top(); }

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const noexcept {
      return a.at != b.at ? a.at > b.at : a.seq > b.seq;
    }
  };
  std::priority_queue<Event, std::vector<Event>, Later> heap_;
  std::uint64_t next_seq_ = 0;
  SimTime now_ = 0;
};

/// One-way latency between peers identified by their join index (source = 0).
class LatencyModel {
 public:
  LatencyModel() = default;
  LatencyModel(LatencySpec spec, std::uint64_t seed);

  /// Always >= 1 ms and symmetric.
  Millis latency(std::size_t a, std::size_t b) const;
  Millis max_latency(std::size_t peers) const;

 private:
  LatencySpec spec_;
  std::uint64_t seed_ = 0;
};

/// Membership and stream directory served to joining subscribers.
class BootstrapRegistry {
 public:
  void add_member(PeerId peer);
  void remove_member(PeerId peer);
  bool is_member(PeerId peer) const { return members_.contains(peer); }
  const std::set<PeerId>& members() const noexcept { return members_; }

  /// Up to `cap` live members other than the requester; deterministic for a given rng state.
  std::vector<PeerId> sample(PeerId requester, std::mt19937_64& rng, std::size_t cap) const;
  LayerRegistry& layers() noexcept { return layers_; }
  const LayerRegistry& layers() const noexcept { return layers_; }

 private:
  std::set<PeerId> members_;
  LayerRegistry layers_;
};

/// Uniform integer in [0, bound) from a 64-bit draw, independent of the standard library's
/// distribution implementations.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound);
double uniform_unit(std::mt19937_64& rng);

struct MetricRow {
  SimTime time = 0;
  PeerId peer;
  std::string_view metric;
  double value = 0.0;
};

struct TopologyRow {
  SimTime time = 0;
  PeerId child;
  std::optional<PeerId> parent;
};

struct MessageCounters {
  std::array<std::uint64_t, kMessageKindCount> sent{};
  std::array<std::uint64_t, kMessageKindCount> delivered{};
  std::array<std::uint64_t, kMessageKindCount> dropped_departure{};
  std::array<std::uint64_t, kMessageKindCount> lost{};
  std::uint64_t in_flight = 0;

  std::uint64_t total(const std::array<std::uint64_t, kMessageKindCount>& a) const;
  /// sent == delivered + dropped_departure + lost + in_flight.
  bool reconciles() const;
};

struct ClassSummary {
  std::size_t peers = 0;       // ever joined
  std::size_t live = 0;        // present at the end
  double mean_final_reputation = 0.0;
  std::uint64_t reports_total = 0;
  std::uint64_t reports_included = 0;
  double inclusion_fraction = 0.0;
  double fraction_detached = 0.0;
  double fraction_leaf_or_detached = 0.0;
  double fraction_below_threshold = 0.0;  // final reputation < 0.1
};

struct PeerOutcome {
  PeerId id;
  std::size_t index = 0;
  PeerRole role = PeerRole::Subscriber;
  BehaviorPolicy policy;
  SimTime joined_at = 0;
  std::optional<SimTime> left_at;
  std::optional<SimTime> first_attached_at;
  bool attached_at_end = false;
  std::size_t children_at_end = 0;
  double final_reputation = 0.0;
  ChunkStats chunks;
};

struct OrphanRecord {
  PeerId orphan;
  PeerId departed_parent;
  BehaviorPolicy policy;
  SimTime orphaned_at = 0;
  std::optional<SimTime> recovered_at;
};

struct MetricsLog {
  std::vector<MetricRow> series;
  std::vector<TopologyRow> topology;
  std::vector<PeerOutcome> peers;
  std::vector<OrphanRecord> orphans;
  std::map<PolicyKind, ClassSummary> classes;
  MessageCounters counters;
  std::uint64_t events_processed = 0;
  std::uint64_t trace_hash = 0;
  std::size_t snapshots = 0;
  std::vector<std::string> snapshot_violations;  // cycles or fan-out excess seen at a sample
  std::vector<std::string> transient_cycles;     // cycles seen right after a parent change
  std::size_t max_children_seen = 0;
  Millis max_latency_ms = 0;
  SimTime end_time = 0;
};

/// Deterministic discrete-event driver for one scenario.
class Simulator final : private PeerEnvironment {
 public:
  explicit Simulator(ScenarioSpec spec);
  ~Simulator() override;
  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  /// Processes events up to and including ScenarioEnd. Throws Error(ProtocolViolation)
  /// naming the offending event when a handler throws.
  MetricsLog run();

  const ScenarioSpec& spec() const noexcept { return spec_; }
  PeerId source_id() const noexcept { return source_id_; }
  StreamId stream() const noexcept { return stream_; }
  SimTime now() const noexcept { return queue_.now(); }
  const PeerNode* node(PeerId id) const;
  std::vector<PeerId> live_peers() const;
  /// Follows believed parents from `peer`; true when the chain reaches the live source.
  bool connected_to_source(PeerId peer) const;
  /// Median of honest reads over the subject's current holders.
  std::optional<double> honest_reputation(PeerId subject) const;

  /// Deterministic peer identifier for a join index.
  static PeerId peer_id_for(std::uint64_t seed, std::size_t index);

 private:
  struct PeerSlot {
    PeerId id;
    std::size_t index = 0;
    PeerRole role = PeerRole::Subscriber;
    BehaviorPolicy policy;
    SimTime joined_at = 0;
    std::optional<SimTime> left_at;
    std::optional<SimTime> first_attached_at;
    std::unique_ptr<PeerNode> node;
    bool live = false;
  };

  // PeerEnvironment.
  std::vector<PeerId> replica_holders(PeerId subject) const override;
  std::optional<double> lookup_reputation(PeerId subject, SimTime now) const override;
  const RepRecord* primary_record(PeerId subject) const override;
  Millis rtt(PeerId a, PeerId b) const override;

  void plan_population();
  PeerSlot& add_slot(PeerRole role, BehaviorPolicy policy);
  std::vector<BehaviorPolicy> draw_policies(std::size_t count, const PolicyMix& mix);

  void process(const Event& event);
  void on_deliver(const ev::Deliver& d);
  void on_timer(const ev::TimerFire& t);
  void on_join(PeerId peer);
  void on_leave(PeerId peer);
  void on_departure(const ev::Departure& d);
  void on_bootstrap(PeerId peer);
  void on_sample();
  void on_scenario_end();

  void apply(PeerSlot& slot, Actions actions);
  void after_handler(PeerSlot& slot, std::optional<PeerId> parent_before);
  void check_orphans();
  void membership_changed();
  std::vector<PeerId> compute_holders(PeerId subject) const;
  void take_sample(SimTime at);
  void check_snapshot(SimTime at);
  void finalize();
  void hash_event(const Event& event);

  PeerSlot* slot(PeerId id);
  const PeerSlot* slot(PeerId id) const;
  bool is_interior(PeerId id) const;

  ScenarioSpec spec_;
  StreamId stream_;
  PeerId source_id_;
  LatencyModel latency_;
  EventQueue queue_;
  std::mt19937_64 rng_;
  std::mt19937_64 churn_rng_;  // victim selection only, so departures do not shift other draws
  BootstrapRegistry registry_;
  std::vector<PeerSlot> slots_;
  std::map<PeerId, std::size_t> index_of_;
  std::map<PeerId, std::vector<PeerId>> holders_;  // live subjects only
  std::set<PeerId> live_;
  MetricsLog log_;
  std::map<PolicyKind, std::pair<std::uint64_t, std::uint64_t>> reports_;  // total, included
  std::vector<std::size_t> open_orphans_;
  std::optional<SimTime> last_sample_;
  bool finished_ = false;
  std::uint64_t trace_ = 0;
};

/// Convenience wrapper: validate, construct and run.
MetricsLog run_scenario(const ScenarioSpec& spec);

}  // namespace repstream
