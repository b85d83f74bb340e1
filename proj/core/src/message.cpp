#include "repstream/message.hpp"

#include <array>
#include <string>

#include "repstream/error.hpp"

namespace repstream {

std::string_view to_string(MessageKind kind) noexcept {
  static constexpr std::array<std::string_view, kMessageKindCount> kNames{
      "Beacon",   "JoinRequest", "JoinAccept", "JoinReject", "Evict",
      "StreamChunk", "RepUpdate", "RepQuery", "RepReply",   "StreamEnd"};
  return kNames[static_cast<std::size_t>(kind)];
}

Message::Message(PeerId sender, PeerId receiver, StreamId stream, Payload payload)
    : sender_(sender), receiver_(receiver), stream_(stream), payload_(std::move(payload)) {
  if (sender_ == receiver_) {
    throw Error(ErrorCode::InvalidArgument,
                "message sender equals receiver (" + to_string(sender_) + ")");
  }
  if (const auto* update = std::get_if<msg::RepUpdate>(&payload_)) {
    if (!(update->reported_value >= 0.0 && update->reported_value <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "RepUpdate value outside [0,1]");
    }
  }
}

}  // namespace repstream
