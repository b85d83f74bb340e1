#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "repstream/ids.hpp"
#include "repstream/message.hpp"
#include "repstream/reputation.hpp"
#include "repstream/reputation_dht.hpp"
#include "repstream/tables.hpp"

namespace repstream {

enum class PeerRole : std::uint8_t { Source, Subscriber };

enum class ReportStrategy : std::uint8_t { AlwaysZero, AlwaysOne, Invert };

enum class PolicyKind : std::uint8_t { Altruistic, FreeRider, Malicious };

struct BehaviorPolicy {
  PolicyKind kind = PolicyKind::Altruistic;
  ReportStrategy strategy = ReportStrategy::Invert;  // meaningful for Malicious only

  static BehaviorPolicy altruistic() { return {PolicyKind::Altruistic, ReportStrategy::Invert}; }
  static BehaviorPolicy free_rider() { return {PolicyKind::FreeRider, ReportStrategy::Invert}; }
  static BehaviorPolicy malicious(ReportStrategy s) { return {PolicyKind::Malicious, s}; }

  /// Free riders forward neither chunks nor beacons.
  bool forwards() const noexcept { return kind != PolicyKind::FreeRider; }
  bool reports() const noexcept { return kind != PolicyKind::FreeRider; }
  /// The value this peer puts on the wire when the honest value is `truth`.
  double report(double truth) const noexcept;

  friend bool operator==(const BehaviorPolicy&, const BehaviorPolicy&) = default;
};

std::string_view to_string(PolicyKind kind) noexcept;
std::string_view to_string(ReportStrategy strategy) noexcept;

/// Protocol timing and admission knobs; defaults are the scenario defaults.
struct ProtocolConfig {
  std::size_t fanout = 4;
  DecayParams decay = default_decay();
  Millis beacon_period = 1000;
  Millis chunk_period = 100;
  Millis join_timeout = 2000;
  Millis keepalive_timeout = 1500;
  Millis keepalive_period = 500;
  Millis maintenance_period = 250;
  Millis parent_timeout = 1500;  // beacon/chunk silence from the parent
  Millis climb_period = 5000;
  Millis query_timeout = 300;
  Millis rt_refresh_period = 5000;
  std::uint32_t report_every_chunks = 10;
  std::uint32_t brt_window_beacons = 10;
  std::uint32_t max_join_attempts = 2;  // sends per target before moving on
  double initial_reputation = kInitialReputation;
  double audit_tolerance = kDefaultAuditTolerance;
  double audit_penalty = kDefaultAuditPenalty;

  Millis reporting_period() const noexcept { return report_every_chunks * chunk_period; }
  Millis brt_window() const noexcept { return brt_window_beacons * beacon_period; }
  Millis audit_window() const noexcept { return 3 * reporting_period(); }
};

struct SessionInfo {
  std::string title;
  std::string speaker;
  std::string date;
  std::string time;

  StreamId stream_id() const { return hash_stream_id(title, speaker, date, time); }
  std::string descriptor() const;
};

enum class TimerKind : std::uint8_t {
  Beacon,
  Chunk,
  Maintenance,
  JoinTimeout,
  QueryTimeout,
  Climb,
  RtRefresh,
};

std::string_view to_string(TimerKind kind) noexcept;

namespace action {
struct Send {
  Message message;
};
struct StartTimer {
  TimerKind kind;
  Millis delay = 0;
  std::uint64_t token = 0;
};
/// Ask the bootstrap registry for an RT sample and the stream descriptor.
struct FetchBootstrap {};
/// Register media and reputation layers for the session.
struct RegisterStream {
  SessionInfo session;
};
enum class What : std::uint8_t { UpdateApplied, UpdateRejected, UpdateIgnored, AuditFlagged };
/// Bookkeeping for the harness; no protocol effect.
struct Observe {
  What what;
  PeerId subject;  // whose record / which child
  PeerId other;    // reporter / auditor
  double value = 0.0;
};
}  // namespace action

using Action = std::variant<action::Send, action::StartTimer, action::FetchBootstrap,
                            action::RegisterStream, action::Observe>;
using Actions = std::vector<Action>;

/// What a peer may ask of the surrounding network. Replica placement and reputation reads
/// resolve against the global membership view; everything else travels as messages.
class PeerEnvironment {
 public:
  virtual ~PeerEnvironment() = default;

  virtual std::vector<PeerId> replica_holders(PeerId subject) const = 0;
  /// Median over the subject's replica holders as they would answer a query right now.
  virtual std::optional<double> lookup_reputation(PeerId subject, SimTime now) const = 0;
  /// The rank-1 holder's copy of the subject's record, for reporter audits.
  virtual const RepRecord* primary_record(PeerId subject) const = 0;
  virtual Millis rtt(PeerId a, PeerId b) const = 0;
};

enum class JoinPurpose : std::uint8_t { Attach, Climb };

struct PendingJoin {
  PeerId target;
  SimTime sent_at = 0;
  std::uint32_t attempts = 0;
  std::uint64_t token = 0;
  JoinPurpose purpose = JoinPurpose::Attach;
};

struct ChunkStats {
  std::uint64_t received = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t late = 0;
  std::uint64_t max_gap = 0;
  std::uint64_t delay_sum_ms = 0;

  double mean_delay_ms() const noexcept {
    return received == 0 ? 0.0 : static_cast<double>(delay_sum_ms) / static_cast<double>(received);
  }
};

/// Per-peer protocol state machine: event in, state mutation plus ordered actions out.
/// The source runs the beacon/chunk/admission loop; subscribers additionally join, forward,
/// report for their parent and climb towards better grandparents.
class PeerNode {
 public:
  PeerNode(PeerId id, PeerRole role, BehaviorPolicy policy, StreamId stream,
           ProtocolConfig config, const PeerEnvironment& env);

  /// Source bring-up: registers both layers, arms beacon and chunk timers.
  /// Throws ProtocolViolation for a second start or a subscriber.
  Actions source_start(const SessionInfo& session, SimTime now);
  /// Subscriber bring-up: fetches the initial RT and arms maintenance timers.
  Actions subscriber_start(SimTime now);
  /// Source ends streaming: StreamEnd to children and all RT/NT entries.
  Actions source_end(SimTime now);

  Actions on_bootstrap(std::span<const PeerId> rt_sample, std::span<const PeerId> stale,
                       std::optional<PeerId> source, SimTime now);
  Actions handle_message(const Message& message, SimTime now);
  Actions on_timer(TimerKind kind, std::uint64_t token, SimTime now);

  Actions handle_beacon(PeerId from, const msg::Beacon& beacon, SimTime now);
  Actions handle_join_request(PeerId from, SimTime now);
  Actions handle_join_accept(PeerId from, const msg::JoinAccept& accept, SimTime now);
  Actions handle_join_reject(PeerId from, const msg::JoinReject& reject, SimTime now);
  Actions handle_evict(PeerId from, const msg::Evict& evict, SimTime now);
  Actions handle_stream_chunk(PeerId from, const msg::StreamChunk& chunk, SimTime now);
  Actions handle_stream_end(PeerId from, SimTime now);
  Actions handle_rep_update(PeerId from, const msg::RepUpdate& update, SimTime now);
  Actions handle_rep_query(PeerId from, const msg::RepQuery& query, SimTime now);
  Actions handle_rep_reply(PeerId from, const msg::RepReply& reply, SimTime now);

  Actions join_timeout_tick(std::uint64_t token, SimTime now);
  Actions grandparent_climb_tick(SimTime now);
  Actions maintenance_tick(SimTime now);

  PeerId id() const noexcept { return id_; }
  PeerRole role() const noexcept { return role_; }
  const BehaviorPolicy& policy() const noexcept { return policy_; }
  StreamId stream() const noexcept { return stream_; }
  const ProtocolConfig& config() const noexcept { return config_; }
  const PeerTables& tables() const noexcept { return tables_; }
  std::optional<PeerId> parent() const noexcept { return tables_.omt.parent(); }
  /// Believed ancestry, source first, ending with the parent.
  const std::vector<PeerId>& path() const noexcept { return path_; }
  /// Source, or a subscriber whose believed ancestry is rooted at the source.
  bool attached() const noexcept;
  bool departed() const noexcept { return departed_; }
  void mark_departed() noexcept { departed_ = true; }
  const std::optional<PendingJoin>& pending_join() const noexcept { return pending_; }
  const std::deque<std::uint64_t>& playout() const noexcept { return playout_; }
  const ChunkStats& chunk_stats() const noexcept { return chunk_stats_; }
  /// Beacon bursts emitted by the source so far.
  std::uint64_t beacons_emitted() const noexcept { return role_ == PeerRole::Source ? beacon_seq_ : 0; }
  std::optional<PeerId> source() const noexcept { return source_; }

  ReplicaStore& replicas() noexcept { return replicas_; }
  const ReplicaStore& replicas() const noexcept { return replicas_; }

 private:
  struct AdmitRequester {
    PeerId requester;
  };
  struct ReportParent {};
  struct ClimbCheck {};
  struct RefreshChild {
    PeerId child;
  };
  using Continuation = std::variant<AdmitRequester, ReportParent, ClimbCheck, RefreshChild>;

  struct PendingQuery {
    PeerId subject;
    std::size_t expected = 0;
    std::vector<std::optional<double>> answers;
    std::vector<Continuation> waiting;
  };

  struct CachedReputation {
    double value = 0.0;
    SimTime at = 0;
  };

  void send(Actions& out, PeerId to, Payload payload) const;
  void start_timer(Actions& out, TimerKind kind, Millis delay, std::uint64_t token = 0) const;

  void request_reputation(PeerId subject, Continuation next, SimTime now, Actions& out,
                          bool bypass_cache = false);
  void finish_query(std::uint64_t query_id, SimTime now, Actions& out);
  void resume(const Continuation& next, PeerId subject, double value, SimTime now, Actions& out);
  std::optional<double> cached_reputation(PeerId subject, SimTime now) const;
  std::optional<double> local_answer(PeerId subject, SimTime now) const;

  void decide_admission(PeerId requester, double reputation, SimTime now, Actions& out);
  void send_report(double own_reputation, SimTime now, Actions& out);
  void evaluate_climb(SimTime now, Actions& out);
  void run_audit(SimTime now, Actions& out);

  bool can_accept_children() const noexcept;
  std::vector<PeerId> path_through_self() const;
  void detach();
  void start_attach(std::span<const PeerId> front, SimTime now, Actions& out);
  void try_next_candidate(SimTime now, Actions& out);
  std::optional<PeerId> next_candidate();
  bool candidate_ok(PeerId id) const;
  void send_join(PeerId target, JoinPurpose purpose, std::uint32_t attempt, SimTime now,
                 Actions& out);
  void leave_parent_for_cycle(SimTime now, Actions& out);

  PeerId id_;
  PeerRole role_;
  BehaviorPolicy policy_;
  StreamId stream_;
  ProtocolConfig config_;
  const PeerEnvironment* env_;

  PeerTables tables_;
  ReplicaStore replicas_;
  std::vector<PeerId> path_;
  std::optional<PeerId> source_;

  bool started_ = false;
  bool departed_ = false;
  bool bootstrapped_ = false;
  bool awaiting_bootstrap_ = false;
  SimTime started_at_ = 0;

  // Joining.
  std::optional<PendingJoin> pending_;
  std::uint64_t join_token_ = 0;
  std::deque<PeerId> front_;
  std::set<PeerId> tried_;
  std::set<PeerId> suspected_;
  std::set<PeerId> admitting_;
  std::optional<PeerId> climb_target_;

  // Liveness.
  SimTime parent_heard_ = 0;
  SimTime keepalive_sent_ = 0;

  // Media.
  std::uint64_t beacon_seq_ = 0;
  std::uint64_t chunk_seq_ = 0;
  std::uint64_t last_beacon_forwarded_ = 0;
  std::deque<std::uint64_t> playout_;
  std::set<std::uint64_t> recent_chunks_;
  std::uint64_t playout_head_ = 0;
  std::uint64_t chunks_from_parent_ = 0;
  ChunkStats chunk_stats_;

  // Reputation queries.
  std::uint64_t next_query_id_ = 0;
  std::map<std::uint64_t, PendingQuery> queries_;
  std::map<PeerId, std::uint64_t> query_by_subject_;
  std::map<PeerId, CachedReputation> rep_cache_;
};

}  // namespace repstream
