#include "repstream/peer_node.hpp"

#include <algorithm>
#include <array>
#include <unordered_set>

#include "repstream/error.hpp"

namespace repstream {

namespace {

constexpr std::size_t kPlayoutWindow = 64;
constexpr std::size_t kDedupWindow = 256;

bool contains(std::span<const PeerId> ids, PeerId id) {
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

}  // namespace

double BehaviorPolicy::report(double truth) const noexcept {
  if (kind != PolicyKind::Malicious) return truth;
  switch (strategy) {
    case ReportStrategy::AlwaysZero: return 0.0;
    case ReportStrategy::AlwaysOne: return 1.0;
    case ReportStrategy::Invert: return 1.0 - truth;
  }
  return truth;
}

std::string_view to_string(PolicyKind kind) noexcept {
  switch (kind) {
    case PolicyKind::Altruistic: return "altruistic";
    case PolicyKind::FreeRider: return "free_rider";
    case PolicyKind::Malicious: return "malicious";
  }
  return "?";
}

std::string_view to_string(ReportStrategy strategy) noexcept {
  switch (strategy) {
    case ReportStrategy::AlwaysZero: return "always_zero";
    case ReportStrategy::AlwaysOne: return "always_one";
    case ReportStrategy::Invert: return "invert";
  }
  return "?";
}

std::string_view to_string(TimerKind kind) noexcept {
  static constexpr std::array<std::string_view, 7> kNames{
      "Beacon", "Chunk", "Maintenance", "JoinTimeout", "QueryTimeout", "Climb", "RtRefresh"};
  return kNames[static_cast<std::size_t>(kind)];
}

std::string SessionInfo::descriptor() const {
  return title + " | " + speaker + " | " + date + " " + time;
}

PeerNode::PeerNode(PeerId id, PeerRole role, BehaviorPolicy policy, StreamId stream,
                   ProtocolConfig config, const PeerEnvironment& env)
    : id_(id),
      role_(role),
      policy_(policy),
      stream_(stream),
      config_(config),
      env_(&env),
      tables_(id, config.fanout) {
  config_.decay.validate();
  if (role_ == PeerRole::Source) source_ = id_;
}

// --- plumbing ---------------------------------------------------------------------------------

void PeerNode::send(Actions& out, PeerId to, Payload payload) const {
  out.emplace_back(action::Send{Message(id_, to, stream_, std::move(payload))});
}

void PeerNode::start_timer(Actions& out, TimerKind kind, Millis delay, std::uint64_t token) const {
  out.emplace_back(action::StartTimer{kind, delay, token});
}

bool PeerNode::attached() const noexcept {
  if (role_ == PeerRole::Source) return !departed_;
  return parent().has_value() && source_.has_value() && !path_.empty() && path_.front() == *source_;
}

bool PeerNode::can_accept_children() const noexcept { return !departed_ && attached(); }

std::vector<PeerId> PeerNode::path_through_self() const {
  std::vector<PeerId> path = path_;
  path.push_back(id_);
  return path;
}

// --- bring-up ---------------------------------------------------------------------------------

Actions PeerNode::source_start(const SessionInfo& session, SimTime now) {
  if (role_ != PeerRole::Source) {
    throw Error(ErrorCode::ProtocolViolation, "source_start on a subscriber");
  }
  if (started_) {
    throw Error(ErrorCode::ProtocolViolation, "source already started");
  }
  if (session.stream_id() != stream_) {
    throw Error(ErrorCode::InvalidArgument, "session metadata does not hash to this stream");
  }
  started_ = true;
  started_at_ = now;
  bootstrapped_ = true;
  Actions out;
  out.emplace_back(action::RegisterStream{session});
  start_timer(out, TimerKind::Beacon, config_.beacon_period);
  start_timer(out, TimerKind::Chunk, config_.chunk_period);
  start_timer(out, TimerKind::Maintenance, config_.maintenance_period);
  start_timer(out, TimerKind::Climb, config_.climb_period);
  start_timer(out, TimerKind::RtRefresh, config_.rt_refresh_period);
  return out;
}

Actions PeerNode::subscriber_start(SimTime now) {
  if (role_ != PeerRole::Subscriber) {
    throw Error(ErrorCode::ProtocolViolation, "subscriber_start on the source");
  }
  if (started_) {
    throw Error(ErrorCode::ProtocolViolation, "subscriber already started");
  }
  started_ = true;
  started_at_ = now;
  awaiting_bootstrap_ = true;
  Actions out;
  out.emplace_back(action::FetchBootstrap{});
  start_timer(out, TimerKind::Maintenance, config_.maintenance_period);
  start_timer(out, TimerKind::Climb, config_.climb_period);
  start_timer(out, TimerKind::RtRefresh, config_.rt_refresh_period);
  return out;
}

Actions PeerNode::source_end(SimTime) {
  if (role_ != PeerRole::Source) {
    throw Error(ErrorCode::ProtocolViolation, "only the source ends the stream");
  }
  Actions out;
  if (departed_) return out;
  std::set<PeerId> targets;
  for (const auto& c : tables_.omt.children()) targets.insert(c.id);
  for (PeerId p : tables_.rt.entries()) targets.insert(p);
  for (const auto& n : tables_.nt.entries()) targets.insert(n.id);
  targets.erase(id_);
  for (PeerId t : targets) send(out, t, msg::StreamEnd{});
  departed_ = true;
  return out;
}

Actions PeerNode::on_bootstrap(std::span<const PeerId> rt_sample, std::span<const PeerId> stale,
                               std::optional<PeerId> source, SimTime now) {
  Actions out;
  if (departed_) return out;
  for (PeerId p : stale) {
    tables_.rt.remove(p);
    tables_.nt.remove(p);
  }
  tables_.rt.merge(rt_sample);
  for (PeerId p : tables_.rt.entries()) tables_.nt.update(p, env_->rtt(id_, p));
  if (role_ == PeerRole::Subscriber && source) source_ = source;
  bootstrapped_ = true;
  if (awaiting_bootstrap_) {
    awaiting_bootstrap_ = false;
    tried_.clear();
    suspected_.clear();
    if (role_ == PeerRole::Subscriber && !parent() && !pending_ && now > started_at_) {
      start_attach({}, now, out);
    }
  }
  return out;
}

// --- dispatch ---------------------------------------------------------------------------------

Actions PeerNode::handle_message(const Message& message, SimTime now) {
  if (departed_) return {};
  const PeerId from = message.sender();
  return std::visit(
      [&](const auto& body) -> Actions {
        using T = std::decay_t<decltype(body)>;
        if constexpr (std::is_same_v<T, msg::Beacon>) {
          return handle_beacon(from, body, now);
        } else if constexpr (std::is_same_v<T, msg::JoinRequest>) {
          return handle_join_request(from, now);
        } else if constexpr (std::is_same_v<T, msg::JoinAccept>) {
          return handle_join_accept(from, body, now);
        } else if constexpr (std::is_same_v<T, msg::JoinReject>) {
          return handle_join_reject(from, body, now);
        } else if constexpr (std::is_same_v<T, msg::Evict>) {
          return handle_evict(from, body, now);
        } else if constexpr (std::is_same_v<T, msg::StreamChunk>) {
          return handle_stream_chunk(from, body, now);
        } else if constexpr (std::is_same_v<T, msg::RepUpdate>) {
          return handle_rep_update(from, body, now);
        } else if constexpr (std::is_same_v<T, msg::RepQuery>) {
          return handle_rep_query(from, body, now);
        } else if constexpr (std::is_same_v<T, msg::RepReply>) {
          return handle_rep_reply(from, body, now);
        } else {
          return handle_stream_end(from, now);
        }
      },
      message.payload());
}

Actions PeerNode::on_timer(TimerKind kind, std::uint64_t token, SimTime now) {
  Actions out;
  if (departed_) return out;
  switch (kind) {
    case TimerKind::Beacon: {
      ++beacon_seq_;
      std::set<PeerId> targets(tables_.rt.entries().begin(), tables_.rt.entries().end());
      for (const auto& n : tables_.nt.entries()) targets.insert(n.id);
      targets.erase(id_);
      for (PeerId t : targets) send(out, t, msg::Beacon{beacon_seq_, {id_}});
      start_timer(out, TimerKind::Beacon, config_.beacon_period);
      break;
    }
    case TimerKind::Chunk: {
      ++chunk_seq_;
      for (const auto& c : tables_.omt.children()) {
        send(out, c.id, msg::StreamChunk{chunk_seq_, now});
      }
      start_timer(out, TimerKind::Chunk, config_.chunk_period);
      break;
    }
    case TimerKind::Maintenance: return maintenance_tick(now);
    case TimerKind::JoinTimeout: return join_timeout_tick(token, now);
    case TimerKind::QueryTimeout:
      if (queries_.contains(token)) finish_query(token, now, out);
      break;
    case TimerKind::Climb: return grandparent_climb_tick(now);
    case TimerKind::RtRefresh:
      out.emplace_back(action::FetchBootstrap{});
      start_timer(out, TimerKind::RtRefresh, config_.rt_refresh_period);
      break;
  }
  return out;
}

// --- beacons ----------------------------------------------------------------------------------

Actions PeerNode::handle_beacon(PeerId from, const msg::Beacon& beacon, SimTime now) {
  Actions out;
  if (departed_ || role_ == PeerRole::Source) return out;
  tables_.brt.record_beacon(from, now, config_.brt_window());

  if (parent() == from) {
    parent_heard_ = now;
    if (contains(beacon.path, id_)) {
      leave_parent_for_cycle(now, out);
      return out;
    }
    path_ = beacon.path;
  }

  if (beacon.seq > last_beacon_forwarded_) {
    last_beacon_forwarded_ = beacon.seq;
    if (policy_.forwards()) {
      const auto path = path_through_self();
      for (const auto& c : tables_.omt.children()) send(out, c.id, msg::Beacon{beacon.seq, path});
    }
  }

  if (!parent() && !pending_ && !awaiting_bootstrap_) start_attach({}, now, out);
  return out;
}

// --- admission --------------------------------------------------------------------------------

Actions PeerNode::handle_join_request(PeerId from, SimTime now) {
  Actions out;
  if (departed_) return out;
  if (tables_.omt.is_child(from)) {
    tables_.omt.touch(from, now);
    if (!cached_reputation(from, now)) request_reputation(from, RefreshChild{from}, now, out);
    return out;
  }
  if (parent() == from) {
    // Our parent lost its own feed; accepting it would close a loop.
    send(out, from, msg::JoinReject{});
    return out;
  }
  if (admitting_.contains(from)) return out;
  admitting_.insert(from);
  request_reputation(from, AdmitRequester{from}, now, out);
  return out;
}

void PeerNode::decide_admission(PeerId requester, double reputation, SimTime now, Actions& out) {
  admitting_.erase(requester);
  if (departed_) return;
  if (tables_.omt.is_child(requester)) {
    tables_.omt.touch(requester, now);
    return;
  }
  if (!can_accept_children() || parent() == requester || contains(path_, requester)) {
    send(out, requester, msg::JoinReject{});
    return;
  }
  const AdmitDecision decision = tables_.omt.admit(requester, reputation, now);
  std::visit(
      [&](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, admit::Accept>) {
          auto siblings = tables_.omt.child_ids();
          std::erase(siblings, requester);
          send(out, requester, msg::JoinAccept{parent(), std::move(siblings), path_through_self()});
        } else if constexpr (std::is_same_v<T, admit::RejectFull>) {
          send(out, requester, msg::JoinReject{d.children});
        } else {
          send(out, d.evicted, msg::Evict{d.evicted_gets});
          auto siblings = d.evicted_gets;
          std::erase(siblings, requester);
          send(out, requester, msg::JoinAccept{parent(), std::move(siblings), path_through_self()});
        }
      },
      decision);
}

// --- join responses ---------------------------------------------------------------------------

Actions PeerNode::handle_join_accept(PeerId from, const msg::JoinAccept& accept, SimTime now) {
  Actions out;
  if (departed_ || !pending_ || pending_->target != from) return out;  // stale or unsolicited
  const JoinPurpose purpose = pending_->purpose;
  pending_.reset();

  if (contains(accept.path, id_) || tables_.omt.is_child(from)) {
    // The accepter sits below us.
    send(out, from, msg::StreamEnd{});
    if (purpose == JoinPurpose::Attach) {
      tried_.insert(from);
      try_next_candidate(now, out);
    }
    return out;
  }

  const std::optional<PeerId> old_parent = parent();
  tables_.omt.set_parent(from);
  path_ = accept.path;
  parent_heard_ = now;
  keepalive_sent_ = now;
  chunks_from_parent_ = 0;
  tables_.bpt.record(accept.grandparent, accept.siblings);
  tried_.clear();
  front_.clear();
  if (old_parent && *old_parent != from) send(out, *old_parent, msg::StreamEnd{});
  return out;
}

Actions PeerNode::handle_join_reject(PeerId from, const msg::JoinReject& reject, SimTime now) {
  Actions out;
  if (departed_) return out;
  if (pending_ && pending_->target == from) {
    tables_.bpt.record(std::nullopt, reject.children);
    if (pending_->purpose == JoinPurpose::Climb) {
      pending_.reset();
      return out;
    }
    pending_.reset();
    tried_.insert(from);
    for (auto it = reject.children.rbegin(); it != reject.children.rend(); ++it) {
      front_.push_front(*it);
    }
    try_next_candidate(now, out);
    return out;
  }
  if (parent() == from) {
    // Our parent no longer counts us as a child.
    detach();
    start_attach(reject.children, now, out);
  }
  return out;
}

Actions PeerNode::handle_evict(PeerId from, const msg::Evict& evict, SimTime now) {
  Actions out;
  if (departed_ || parent() != from) return out;
  detach();
  tables_.bpt.record(std::nullopt, evict.siblings);
  pending_.reset();
  start_attach(evict.siblings, now, out);
  tried_.insert(from);
  return out;
}

void PeerNode::detach() {
  tables_.omt.set_parent(std::nullopt);
  path_.clear();
  chunks_from_parent_ = 0;
}

void PeerNode::leave_parent_for_cycle(SimTime now, Actions& out) {
  if (const auto p = parent()) send(out, *p, msg::StreamEnd{});
  detach();
  start_attach({}, now, out);
}

void PeerNode::start_attach(std::span<const PeerId> front, SimTime now, Actions& out) {
  if (role_ != PeerRole::Subscriber) return;
  tried_.clear();
  front_.assign(front.begin(), front.end());
  pending_.reset();
  try_next_candidate(now, out);
}

bool PeerNode::candidate_ok(PeerId id) const {
  return id != id_ && !tried_.contains(id) && !suspected_.contains(id) &&
         !tables_.omt.is_child(id) && parent() != id;
}

std::optional<PeerId> PeerNode::next_candidate() {
  while (!front_.empty()) {
    const PeerId c = front_.front();
    front_.pop_front();
    if (candidate_ok(c)) return c;
  }
  for (const auto& e : tables_.brt.entries()) {
    if (candidate_ok(e.id)) return e.id;
  }
  for (PeerId g : tables_.bpt.grandparents()) {
    if (candidate_ok(g)) return g;
  }
  for (PeerId s : tables_.bpt.siblings()) {
    if (candidate_ok(s)) return s;
  }
  if (source_ && candidate_ok(*source_)) return *source_;
  return std::nullopt;
}

void PeerNode::try_next_candidate(SimTime now, Actions& out) {
  const auto candidate = next_candidate();
  if (!candidate) {
    // Every known candidate failed: re-bootstrap and start over.
    pending_.reset();
    front_.clear();
    tried_.clear();
    awaiting_bootstrap_ = true;
    out.emplace_back(action::FetchBootstrap{});
    return;
  }
  send_join(*candidate, JoinPurpose::Attach, 1, now, out);
}

void PeerNode::send_join(PeerId target, JoinPurpose purpose, std::uint32_t attempt, SimTime now,
                         Actions& out) {
  const std::uint64_t token = ++join_token_;
  pending_ = PendingJoin{target, now, attempt, token, purpose};
  send(out, target, msg::JoinRequest{});
  start_timer(out, TimerKind::JoinTimeout, config_.join_timeout, token);
}

Actions PeerNode::join_timeout_tick(std::uint64_t token, SimTime now) {
  Actions out;
  if (departed_ || !pending_ || pending_->token != token) return out;
  const PendingJoin expired = *pending_;
  if (expired.attempts < config_.max_join_attempts) {
    send_join(expired.target, expired.purpose, expired.attempts + 1, now, out);
    return out;
  }
  pending_.reset();
  if (expired.purpose == JoinPurpose::Climb) return out;
  suspected_.insert(expired.target);
  tried_.insert(expired.target);
  try_next_candidate(now, out);
  return out;
}

// --- media ------------------------------------------------------------------------------------

Actions PeerNode::handle_stream_chunk(PeerId from, const msg::StreamChunk& chunk, SimTime now) {
  Actions out;
  if (departed_ || role_ == PeerRole::Source) return out;
  const bool from_parent = parent() == from;
  if (from_parent) parent_heard_ = now;

  if (recent_chunks_.contains(chunk.seq)) {
    ++chunk_stats_.duplicates;
    return out;
  }
  if (chunk.seq <= playout_head_) {
    ++chunk_stats_.late;
    return out;
  }
  recent_chunks_.insert(chunk.seq);
  while (recent_chunks_.size() > kDedupWindow) recent_chunks_.erase(recent_chunks_.begin());
  if (playout_head_ != 0) {
    chunk_stats_.max_gap = std::max(chunk_stats_.max_gap, chunk.seq - playout_head_);
  }
  playout_head_ = chunk.seq;
  playout_.push_back(chunk.seq);
  while (playout_.size() > kPlayoutWindow) playout_.pop_front();
  ++chunk_stats_.received;
  chunk_stats_.delay_sum_ms += now >= chunk.origin_time ? now - chunk.origin_time : 0;

  if (policy_.forwards()) {
    for (const auto& c : tables_.omt.children()) send(out, c.id, chunk);
  }
  if (from_parent && policy_.reports()) {
    ++chunks_from_parent_;
    if (chunks_from_parent_ % config_.report_every_chunks == 0) {
      request_reputation(id_, ReportParent{}, now, out, /*bypass_cache=*/true);
    }
  }
  return out;
}

void PeerNode::send_report(double own_reputation, SimTime now, Actions& out) {
  const auto target = parent();
  if (!target || departed_) return;
  const double value = policy_.report(own_reputation);
  for (PeerId holder : env_->replica_holders(*target)) {
    if (holder == id_) {
      const auto status = replicas_.handle_update({*target, value, id_, now}, now, config_.decay,
                                                  env_->lookup_reputation(id_, now),
                                                  config_.audit_tolerance);
      const auto what = status == UpdateStatus::Applied || status == UpdateStatus::Pinned
                            ? action::What::UpdateApplied
                        : status == UpdateStatus::Mismatched ? action::What::UpdateRejected
                                                             : action::What::UpdateIgnored;
      out.emplace_back(action::Observe{what, *target, id_, value});
      continue;
    }
    send(out, holder, msg::RepUpdate{*target, value, own_reputation});
  }
}

Actions PeerNode::handle_stream_end(PeerId from, SimTime) {
  Actions out;
  if (departed_) return out;
  if (tables_.omt.is_child(from)) {
    tables_.omt.remove_child(from);
    return out;
  }
  if (parent() == from || source_ == from) {
    for (const auto& c : tables_.omt.children()) {
      if (c.id != from) send(out, c.id, msg::StreamEnd{});
    }
    departed_ = true;
  }
  return out;
}

// --- reputation layer -------------------------------------------------------------------------

Actions PeerNode::handle_rep_update(PeerId from, const msg::RepUpdate& update, SimTime now) {
  Actions out;
  const RepReport report{update.target, update.reported_value, from, now};
  const auto status = replicas_.handle_update(report, now, config_.decay,
                                              env_->lookup_reputation(from, now),
                                              config_.audit_tolerance);
  action::What what = action::What::UpdateIgnored;
  if (status == UpdateStatus::Applied || status == UpdateStatus::Pinned) {
    what = action::What::UpdateApplied;
  } else if (status == UpdateStatus::Mismatched) {
    what = action::What::UpdateRejected;
  }
  out.emplace_back(action::Observe{what, update.target, from, update.reported_value});
  return out;
}

std::optional<double> PeerNode::local_answer(PeerId subject, SimTime now) const {
  const auto honest = replicas_.answer(subject, now, config_.decay);
  if (!honest) return std::nullopt;
  return policy_.report(*honest);
}

Actions PeerNode::handle_rep_query(PeerId from, const msg::RepQuery& query, SimTime now) {
  Actions out;
  send(out, from, msg::RepReply{query.subject, query.query_id, local_answer(query.subject, now)});
  return out;
}

Actions PeerNode::handle_rep_reply(PeerId, const msg::RepReply& reply, SimTime now) {
  Actions out;
  auto it = queries_.find(reply.query_id);
  if (it == queries_.end() || it->second.subject != reply.subject) return out;
  it->second.answers.push_back(reply.value);
  if (it->second.answers.size() >= it->second.expected) finish_query(reply.query_id, now, out);
  return out;
}

std::optional<double> PeerNode::cached_reputation(PeerId subject, SimTime now) const {
  auto it = rep_cache_.find(subject);
  if (it == rep_cache_.end()) return std::nullopt;
  if (now - it->second.at >= config_.reporting_period()) return std::nullopt;
  return it->second.value;
}

void PeerNode::request_reputation(PeerId subject, Continuation next, SimTime now, Actions& out,
                                  bool bypass_cache) {
  if (!bypass_cache) {
    if (const auto cached = cached_reputation(subject, now)) {
      resume(next, subject, *cached, now, out);
      return;
    }
  }
  if (auto in_flight = query_by_subject_.find(subject); in_flight != query_by_subject_.end()) {
    queries_.at(in_flight->second).waiting.push_back(std::move(next));
    return;
  }
  const auto holders = env_->replica_holders(subject);
  if (holders.empty()) {
    resume(next, subject, config_.initial_reputation, now, out);
    return;
  }
  const std::uint64_t query_id = ++next_query_id_;
  PendingQuery query{subject, holders.size(), {}, {std::move(next)}};
  for (PeerId holder : holders) {
    if (holder == id_) {
      query.answers.push_back(replicas_.answer(subject, now, config_.decay));
    } else {
      send(out, holder, msg::RepQuery{subject, query_id});
    }
  }
  const bool complete = query.answers.size() >= query.expected;
  queries_.emplace(query_id, std::move(query));
  query_by_subject_[subject] = query_id;
  if (complete) {
    finish_query(query_id, now, out);
  } else {
    start_timer(out, TimerKind::QueryTimeout, config_.query_timeout, query_id);
  }
}

void PeerNode::finish_query(std::uint64_t query_id, SimTime now, Actions& out) {
  auto node = queries_.extract(query_id);
  if (node.empty()) return;
  PendingQuery query = std::move(node.mapped());
  query_by_subject_.erase(query.subject);
  const double value =
      query.answers.empty() ? config_.initial_reputation : combine_answers(query.answers);
  rep_cache_[query.subject] = CachedReputation{value, now};
  for (const auto& next : query.waiting) resume(next, query.subject, value, now, out);
}

void PeerNode::resume(const Continuation& next, PeerId subject, double value, SimTime now,
                      Actions& out) {
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, AdmitRequester>) {
          decide_admission(c.requester, value, now, out);
        } else if constexpr (std::is_same_v<T, ReportParent>) {
          send_report(value, now, out);
        } else if constexpr (std::is_same_v<T, ClimbCheck>) {
          evaluate_climb(now, out);
        } else {
          tables_.omt.set_child_reputation(c.child, value);
        }
      },
      next);
  (void)subject;
}

// --- periodic work ----------------------------------------------------------------------------

Actions PeerNode::grandparent_climb_tick(SimTime now) {
  Actions out;
  if (departed_) return out;
  start_timer(out, TimerKind::Climb, config_.climb_period);
  if (!tables_.omt.children().empty()) run_audit(now, out);

  if (role_ != PeerRole::Subscriber || !attached() || pending_ || climb_target_) return out;
  const auto& grandparents = tables_.bpt.grandparents();
  const auto p = parent();
  auto g = std::find_if(grandparents.begin(), grandparents.end(), [&](PeerId id) {
    return id != *p && id != id_ && !tables_.omt.is_child(id);
  });
  if (g == grandparents.end()) return out;
  climb_target_ = *g;
  request_reputation(*g, ClimbCheck{}, now, out);
  request_reputation(*p, ClimbCheck{}, now, out);
  return out;
}

void PeerNode::evaluate_climb(SimTime now, Actions& out) {
  if (!climb_target_) return;
  const PeerId g = *climb_target_;
  const auto p = parent();
  if (!p) {
    climb_target_.reset();
    return;
  }
  const auto rep_g = cached_reputation(g, now);
  const auto rep_p = cached_reputation(*p, now);
  if (!rep_g || !rep_p) return;  // the other query is still out
  climb_target_.reset();
  if (pending_ || !attached() || tables_.omt.is_child(g) || g == *p) return;
  if (*rep_g > *rep_p) send_join(g, JoinPurpose::Climb, 1, now, out);
}

void PeerNode::run_audit(SimTime now, Actions& out) {
  const RepRecord* record = env_->primary_record(id_);
  if (record == nullptr) return;
  const Millis window = config_.audit_window();
  if (now < window) return;
  const SimTime window_start = now - window;
  std::vector<PeerId> expected;
  for (const auto& c : tables_.omt.children()) {
    if (c.admitted_at <= window_start) expected.push_back(c.id);
  }
  const auto lookup = [this, now](PeerId p) { return env_->lookup_reputation(p, now); };
  const AuditResult result =
      audit_reporters(*record, expected, window_start, config_.audit_tolerance, lookup);
  for (PeerId c : expected) {
    const bool flagged = std::binary_search(result.missing.begin(), result.missing.end(), c) ||
                         std::binary_search(result.mismatched.begin(), result.mismatched.end(), c);
    tables_.omt.set_child_penalty(c, flagged ? config_.audit_penalty : 0.0);
    if (flagged) out.emplace_back(action::Observe{action::What::AuditFlagged, c, id_, 0.0});
  }
}

Actions PeerNode::maintenance_tick(SimTime now) {
  Actions out;
  if (departed_) return out;
  start_timer(out, TimerKind::Maintenance, config_.maintenance_period);

  for (PeerId gone : tables_.omt.sweep(now, config_.keepalive_timeout)) {
    (void)gone;
  }
  tables_.brt.refresh(now, config_.brt_window());
  if (role_ != PeerRole::Subscriber) return out;

  if (const auto p = parent()) {
    if (now - parent_heard_ > config_.parent_timeout) {
      suspected_.insert(*p);
      tables_.brt.remove(*p);
      tables_.bpt.remove(*p);
      detach();
      start_attach({}, now, out);
      return out;
    }
    if (now - keepalive_sent_ >= config_.keepalive_period) {
      keepalive_sent_ = now;
      send(out, *p, msg::JoinRequest{});
    }
    return out;
  }
  if (!pending_ && bootstrapped_ && !awaiting_bootstrap_ &&
      now - started_at_ >= config_.beacon_period) {
    start_attach({}, now, out);
  }
  return out;
}

}  // namespace repstream
