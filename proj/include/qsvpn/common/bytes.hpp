#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qsvpn {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

std::string to_hex(ByteView data);
Bytes from_hex(std::string_view hex);  // throws Error(BadLength) on odd/invalid input

std::string to_base64(ByteView data);
Bytes from_base64(std::string_view text);

Bytes to_bytes(std::string_view text);
Bytes concat(std::initializer_list<ByteView> parts);
Bytes xor_bytes(ByteView a, ByteView b);  // sizes must match

void append_u32_be(Bytes& out, std::uint32_t value);
void append_u64_be(Bytes& out, std::uint64_t value);

// True if `needle` occurs anywhere in `haystack` as a contiguous run.
bool contains_subsequence(ByteView haystack, ByteView needle);

/// 16-octet key identifier: an 8-octet source tag followed by a big-endian
/// 8-octet counter. Rendered as 32 lowercase hex digits on every wire format.
class KeyId {
 public:
  static constexpr std::size_t kSize = 16;

  KeyId() = default;
  explicit KeyId(const std::array<std::uint8_t, kSize>& raw) : raw_(raw) {}
  KeyId(std::uint64_t tag, std::uint64_t counter);

  static KeyId from_hex(std::string_view hex);

  std::uint64_t tag() const noexcept;
  std::uint64_t counter() const noexcept;
  const std::array<std::uint8_t, kSize>& raw() const noexcept { return raw_; }
  std::string hex() const;

  auto operator<=>(const KeyId&) const = default;

 private:
  std::array<std::uint8_t, kSize> raw_{};
};

// 64-bit tag derived from a textual source name (first 8 octets of SHA-512).
std::uint64_t source_tag(std::string_view name);

/// Node identifier. Kept distinct from link/source strings so call sites
/// cannot mix them up.
struct NodeId {
  std::string value;

  NodeId() = default;
  NodeId(std::string v) : value(std::move(v)) {}  // NOLINT: implicit by intent
  NodeId(const char* v) : value(v) {}             // NOLINT

  auto operator<=>(const NodeId&) const = default;
  bool operator==(const NodeId&) const = default;
};

inline const std::string& str(const NodeId& id) { return id.value; }

/// Unordered node pair; stored canonically with first <= second.
struct NodePair {
  NodeId first;
  NodeId second;

  NodePair() = default;
  NodePair(NodeId a, NodeId b);

  bool contains(const NodeId& n) const { return first == n || second == n; }
  const NodeId& other(const NodeId& n) const { return first == n ? second : first; }
  std::string label() const { return first.value + "~" + second.value; }

  auto operator<=>(const NodePair&) const = default;
  bool operator==(const NodePair&) const = default;
};

}  // namespace qsvpn
