#include "repstream/ids.hpp"

#include <array>

namespace repstream {

namespace {

constexpr std::string_view kFieldSeparator{"\x1f", 1};
constexpr std::string_view kReputationTag{"reputation"};

}  // namespace

Fnv1a& Fnv1a::update(std::span<const std::byte> bytes) noexcept {
  for (std::byte b : bytes) {
    state_ ^= static_cast<std::uint64_t>(b);
    state_ *= kFnvPrime;
  }
  return *this;
}

Fnv1a& Fnv1a::update(std::string_view text) noexcept {
  return update(std::as_bytes(std::span{text.data(), text.size()}));
}

Fnv1a& Fnv1a::update_u64(std::uint64_t value) noexcept {
  std::array<std::byte, 8> le{};
  for (std::size_t i = 0; i < le.size(); ++i) {
    le[i] = static_cast<std::byte>((value >> (8 * i)) & 0xffU);
  }
  return update(le);
}

std::uint64_t fnv1a64(std::string_view text) noexcept { return Fnv1a{}.update(text).digest(); }

StreamId hash_stream_id(std::string_view title, std::string_view speaker, std::string_view date,
                        std::string_view time) {
  Fnv1a h;
  h.update(title).update(kFieldSeparator).update(speaker).update(kFieldSeparator).update(date);
  h.update(kFieldSeparator).update(time);
  return StreamId{h.digest()};
}

LayerId media_layer(StreamId stream) noexcept { return LayerId{stream.key, LayerKind::Media}; }

LayerId derive_reputation_layer(StreamId stream) noexcept {
  Fnv1a h;
  h.update_u64(stream.key).update(kReputationTag);
  return LayerId{h.digest(), LayerKind::Reputation};
}

std::uint64_t record_key(PeerId subject) noexcept { return Fnv1a{}.update_u64(subject.key).digest(); }

std::string to_string(PeerId id) { return std::to_string(id.key); }

}  // namespace repstream
