#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "repstream/ids.hpp"

namespace repstream {

enum class MessageKind : std::uint8_t {
  Beacon,
  JoinRequest,
  JoinAccept,
  JoinReject,
  Evict,
  StreamChunk,
  RepUpdate,
  RepQuery,
  RepReply,
  StreamEnd,
};

inline constexpr std::size_t kMessageKindCount = 10;

std::string_view to_string(MessageKind kind) noexcept;

namespace msg {

/// Liveness packet. `path` is the forwarder's ancestry ending with the forwarder itself;
/// a source-originated beacon carries [source].
struct Beacon {
  std::uint64_t seq = 0;
  std::vector<PeerId> path;
};

/// Also used as the child keepalive.
struct JoinRequest {};

struct JoinAccept {
  std::optional<PeerId> grandparent;
  std::vector<PeerId> siblings;  // the accepter's other children
  std::vector<PeerId> path;      // the accepter's ancestry ending with the accepter
};

struct JoinReject {
  std::vector<PeerId> children;
};

struct Evict {
  std::vector<PeerId> siblings;
};

struct StreamChunk {
  std::uint64_t seq = 0;
  SimTime origin_time = 0;
};

struct RepUpdate {
  PeerId target;
  double reported_value = 0.0;
  double reporter_snapshot = 0.0;
};

struct RepQuery {
  PeerId subject;
  std::uint64_t query_id = 0;
};

struct RepReply {
  PeerId subject;
  std::uint64_t query_id = 0;
  std::optional<double> value;  // empty = holder has no record
};

/// From a parent: the stream is over. From a child: the child is leaving.
struct StreamEnd {};

}  // namespace msg

/// Alternative order matches MessageKind.
using Payload = std::variant<msg::Beacon, msg::JoinRequest, msg::JoinAccept, msg::JoinReject,
                             msg::Evict, msg::StreamChunk, msg::RepUpdate, msg::RepQuery,
                             msg::RepReply, msg::StreamEnd>;

static_assert(std::variant_size_v<Payload> == kMessageKindCount);

class Message {
 public:
  /// Throws Error(InvalidArgument) when sender == receiver or a RepUpdate value lies outside [0,1].
  Message(PeerId sender, PeerId receiver, StreamId stream, Payload payload);

  PeerId sender() const noexcept { return sender_; }
  PeerId receiver() const noexcept { return receiver_; }
  StreamId stream() const noexcept { return stream_; }
  MessageKind kind() const noexcept { return static_cast<MessageKind>(payload_.index()); }
  const Payload& payload() const noexcept { return payload_; }

  template <typename T>
  const T* as() const noexcept {
    return std::get_if<T>(&payload_);
  }

 private:
  PeerId sender_;
  PeerId receiver_;
  StreamId stream_;
  Payload payload_;
};

}  // namespace repstream
