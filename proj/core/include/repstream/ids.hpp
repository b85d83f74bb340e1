#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>

namespace repstream {

/// Simulation time and durations, integer milliseconds.
using SimTime = std::uint64_t;
using Millis = std::uint64_t;

/// A node identifier on the 64-bit circular key space.
struct PeerId {
  std::uint64_t key = 0;

  friend constexpr auto operator<=>(PeerId, PeerId) = default;
};

struct StreamId {
  std::uint64_t key = 0;

  friend constexpr auto operator<=>(StreamId, StreamId) = default;
};

enum class LayerKind : std::uint8_t { Media, Reputation };

struct LayerId {
  std::uint64_t key = 0;
  LayerKind kind = LayerKind::Media;

  friend constexpr auto operator<=>(const LayerId&, const LayerId&) = default;
};

/// Circular distance min(|a-b|, 2^64-|a-b|). Symmetric, zero iff a == b, at most 2^63.
constexpr std::uint64_t circular_distance(PeerId a, PeerId b) noexcept {
  const std::uint64_t forward = a.key - b.key;  // mod 2^64
  const std::uint64_t backward = b.key - a.key;
  return forward < backward ? forward : backward;
}

constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

/// Incremental 64-bit FNV-1a.
class Fnv1a {
 public:
  Fnv1a& update(std::span<const std::byte> bytes) noexcept;
  Fnv1a& update(std::string_view text) noexcept;
  Fnv1a& update_u64(std::uint64_t value) noexcept;  // little-endian bytes
  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = kFnvOffsetBasis;
};

std::uint64_t fnv1a64(std::string_view text) noexcept;

/// FNV-1a of "title\x1fspeaker\x1fdate\x1ftime".
StreamId hash_stream_id(std::string_view title, std::string_view speaker, std::string_view date,
                        std::string_view time);

LayerId media_layer(StreamId stream) noexcept;

/// FNV-1a of the stream key's 8 little-endian bytes followed by the tag "reputation".
LayerId derive_reputation_layer(StreamId stream) noexcept;

/// Ring position at which a subject's reputation record is stored.
std::uint64_t record_key(PeerId subject) noexcept;

std::string to_string(PeerId id);

}  // namespace repstream

template <>
struct std::hash<repstream::PeerId> {
  std::size_t operator()(repstream::PeerId id) const noexcept {
    return std::hash<std::uint64_t>{}(id.key);
  }
};

template <>
struct std::hash<repstream::StreamId> {
  std::size_t operator()(repstream::StreamId id) const noexcept {
    return std::hash<std::uint64_t>{}(id.key);
  }
};
