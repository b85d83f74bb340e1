#include "repstream/reputation_dht.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>
#include <unordered_set>

#include "repstream/error.hpp"

namespace repstream {

ReplicaSet locate_replicas(PeerId subject, std::span<const PeerId> live_peers) {
  if (live_peers.empty()) {
    throw Error(ErrorCode::NoHolders, "no live peers to hold record of " + to_string(subject));
  }
  const PeerId anchor{record_key(subject)};
  std::vector<PeerId> candidates(live_peers.begin(), live_peers.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  const std::size_t n = std::min(kReplicaCount, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n),
                    candidates.end(), [anchor](PeerId a, PeerId b) {
                      return std::tuple{circular_distance(anchor, a), a} <
                             std::tuple{circular_distance(anchor, b), b};
                    });
  candidates.resize(n);
  return ReplicaSet{subject, std::move(candidates)};
}

UpdateStatus apply_update(RepRecord& record, const RepReport& report, SimTime now,
                          const DecayParams& params) {
  if (report.target != record.subject) {
    throw Error(ErrorCode::InvalidArgument, "report target does not match record subject");
  }
  if (!(report.reported_value >= 0.0 && report.reported_value <= 1.0)) {
    return UpdateStatus::Malformed;
  }
  if (record.pinned) {
    return UpdateStatus::Pinned;
  }
  record.reputation = aggregate(record.reputation, report, now, params);
  record.last_reporters.push_back({report.reporter, report.reported_value, now, true});
  while (record.last_reporters.size() > kReporterLogCapacity) record.last_reporters.pop_front();
  return UpdateStatus::Applied;
}

double read_record(const RepRecord& record, SimTime now, const DecayParams& params) {
  if (record.pinned) return record.reputation.value;
  return decay_only(record.reputation, now, params).value;
}

double combine_answers(std::span<const std::optional<double>> answers) {
  if (answers.empty()) {
    throw Error(ErrorCode::QueryTimeout, "no replica holder reachable");
  }
  std::vector<double> known;
  for (const auto& a : answers) {
    if (a) known.push_back(*a);
  }
  if (known.empty()) return kInitialReputation;
  return resolve_replicas(known, answers.size());
}

double answer_query(std::span<const RepRecord* const> reachable, PeerId subject, SimTime now,
                    const DecayParams& params) {
  std::vector<std::optional<double>> answers;
  answers.reserve(reachable.size());
  for (const RepRecord* record : reachable) {
    if (record == nullptr) {
      answers.emplace_back();
      continue;
    }
    if (record->subject != subject) {
      throw Error(ErrorCode::InvalidArgument, "holder view is for a different subject");
    }
    answers.emplace_back(read_record(*record, now, params));
  }
  return combine_answers(answers);
}

bool report_consistent(double reported, std::optional<double> reporter_reputation,
                       double tolerance) noexcept {
  if (!reporter_reputation) return true;  // nothing to check against
  return std::abs(reported - *reporter_reputation) <= tolerance;
}

AuditResult audit_reporters(const RepRecord& record, std::span<const PeerId> expected_children,
                            SimTime window_start, double tolerance, const ReputationLookup& lookup) {
  AuditResult result;
  for (PeerId child : expected_children) {
    const ReporterEntry* latest = nullptr;
    for (const auto& entry : record.last_reporters) {
      if (entry.reporter == child && entry.at >= window_start) latest = &entry;
    }
    if (latest == nullptr) {
      result.missing.push_back(child);
      continue;
    }
    const auto truth = lookup ? lookup(child) : std::nullopt;
    if (!report_consistent(latest->value, truth, tolerance)) {
      result.mismatched.push_back(child);
    }
  }
  std::sort(result.missing.begin(), result.missing.end());
  std::sort(result.mismatched.begin(), result.mismatched.end());
  return result;
}

// --- ReplicaStore -----------------------------------------------------------------------------

void ReplicaStore::install(RepRecord record) {
  const PeerId subject = record.subject;
  records_.insert_or_assign(subject, std::move(record));
}

bool ReplicaStore::erase(PeerId subject) { return records_.erase(subject) > 0; }

const RepRecord* ReplicaStore::find(PeerId subject) const {
  auto it = records_.find(subject);
  return it == records_.end() ? nullptr : &it->second;
}

RepRecord* ReplicaStore::find(PeerId subject) {
  auto it = records_.find(subject);
  return it == records_.end() ? nullptr : &it->second;
}

UpdateStatus ReplicaStore::handle_update(const RepReport& report, SimTime now,
                                         const DecayParams& params,
                                         std::optional<double> reporter_reputation,
                                         double tolerance) {
  RepRecord* record = find(report.target);
  if (record == nullptr) return UpdateStatus::UnknownSubject;
  if (!(report.reported_value >= 0.0 && report.reported_value <= 1.0)) {
    return UpdateStatus::Malformed;
  }
  if (!report_consistent(report.reported_value, reporter_reputation, tolerance)) {
    record->last_reporters.push_back({report.reporter, report.reported_value, now, false});
    while (record->last_reporters.size() > kReporterLogCapacity) record->last_reporters.pop_front();
    return UpdateStatus::Mismatched;
  }
  if (record->pinned) {
    record->last_reporters.push_back({report.reporter, report.reported_value, now, true});
    while (record->last_reporters.size() > kReporterLogCapacity) record->last_reporters.pop_front();
    return UpdateStatus::Pinned;
  }
  return apply_update(*record, report, now, params);
}

std::optional<double> ReplicaStore::answer(PeerId subject, SimTime now,
                                           const DecayParams& params) const {
  const RepRecord* record = find(subject);
  if (record == nullptr) return std::nullopt;
  return read_record(*record, now, params);
}

// --- LayerRegistry ----------------------------------------------------------------------------

const StreamEntry& LayerRegistry::register_stream(StreamId stream, PeerId source,
                                                  std::string descriptor) {
  if (entries_.contains(stream)) {
    throw Error(ErrorCode::Conflict, "stream " + std::to_string(stream.key) + " already registered");
  }
  StreamEntry entry{stream, source, media_layer(stream), derive_reputation_layer(stream),
                    std::move(descriptor)};
  return entries_.emplace(stream, std::move(entry)).first->second;
}

const StreamEntry& LayerRegistry::lookup(StreamId stream) const {
  const StreamEntry* entry = find(stream);
  if (entry == nullptr) {
    throw Error(ErrorCode::NotFound, "stream " + std::to_string(stream.key) + " not registered");
  }
  return *entry;
}

const StreamEntry* LayerRegistry::find(StreamId stream) const {
  auto it = entries_.find(stream);
  return it == entries_.end() ? nullptr : &it->second;
}

}  // namespace repstream
