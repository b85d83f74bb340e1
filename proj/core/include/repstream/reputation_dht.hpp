#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "repstream/ids.hpp"
#include "repstream/reputation.hpp"

namespace repstream {

inline constexpr std::size_t kReplicaCount = 3;
inline constexpr std::size_t kReporterLogCapacity = 32;
inline constexpr double kDefaultAuditTolerance = 0.2;
inline constexpr double kDefaultAuditPenalty = 0.1;

struct ReplicaSet {
  PeerId subject;
  std::vector<PeerId> holders;  // ascending circular distance from record_key(subject), then id
};

/// The min(3, |live|) live peers closest to record_key(subject). Throws NoHolders if none.
ReplicaSet locate_replicas(PeerId subject, std::span<const PeerId> live_peers);

struct ReporterEntry {
  PeerId reporter;
  double value = 0.0;
  SimTime at = 0;
  bool accepted = true;
};

struct RepRecord {
  PeerId subject;
  Reputation reputation;
  std::deque<ReporterEntry> last_reporters;  // oldest first, at most kReporterLogCapacity
  bool pinned = false;                       // the stream source: fixed at 1.0, never decays
};

enum class UpdateStatus { Applied, Mismatched, Malformed, UnknownSubject, Pinned };

/// Applies one report through aggregate() and logs the reporter. A value outside [0,1]
/// leaves the record untouched and returns Malformed.
UpdateStatus apply_update(RepRecord& record, const RepReport& report, SimTime now,
                          const DecayParams& params);

/// Current value of a stored record (decayed to `now` unless pinned).
double read_record(const RepRecord& record, SimTime now, const DecayParams& params);

/// Median of the answers that carry a value; kInitialReputation when no holder knows the
/// subject. Throws QueryTimeout when `answers` is empty (no holder reachable).
double combine_answers(std::span<const std::optional<double>> answers);

/// Querier-side resolution over the reachable holders' views (nullptr = holder has no record).
double answer_query(std::span<const RepRecord* const> reachable, PeerId subject, SimTime now,
                    const DecayParams& params);

struct AuditResult {
  std::vector<PeerId> missing;     // expected reporters with no log entry since window_start
  std::vector<PeerId> mismatched;  // latest report deviates from the reporter's reputation by > tolerance

  bool clean() const noexcept { return missing.empty() && mismatched.empty(); }
};

using ReputationLookup = std::function<std::optional<double>(PeerId)>;

AuditResult audit_reporters(const RepRecord& record, std::span<const PeerId> expected_children,
                            SimTime window_start, double tolerance, const ReputationLookup& lookup);

/// A report is trusted when it matches the reporter's own reputation within tolerance.
bool report_consistent(double reported, std::optional<double> reporter_reputation,
                       double tolerance) noexcept;

/// Records held by one replica holder.
class ReplicaStore {
 public:
  void install(RepRecord record);
  bool erase(PeerId subject);
  const RepRecord* find(PeerId subject) const;
  RepRecord* find(PeerId subject);
  const std::map<PeerId, RepRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }

  /// Verifies the report against the reporter's reputation, then applies it.
  UpdateStatus handle_update(const RepReport& report, SimTime now, const DecayParams& params,
                             std::optional<double> reporter_reputation, double tolerance);

  std::optional<double> answer(PeerId subject, SimTime now, const DecayParams& params) const;

 private:
  std::map<PeerId, RepRecord> records_;
};

struct StreamEntry {
  StreamId stream;
  PeerId source;
  LayerId media;
  LayerId reputation;
  std::string descriptor;
};

/// streamID -> (source, media layer, reputation layer, descriptor).
class LayerRegistry {
 public:
  /// Throws Conflict if the stream is already registered.
  const StreamEntry& register_stream(StreamId stream, PeerId source, std::string descriptor);
  /// Throws NotFound.
  const StreamEntry& lookup(StreamId stream) const;
  const StreamEntry* find(StreamId stream) const;
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::map<StreamId, StreamEntry> entries_;
};

}  // namespace repstream
