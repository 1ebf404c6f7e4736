#include "qsvpn/common/bytes.hpp"

#include <algorithm>
#include <openssl/evp.h>
#include <openssl/sha.h>

#include "qsvpn/common/error.hpp"

namespace qsvpn {

std::string to_hex(ByteView data) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (auto b : data) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0x0f]);
  }
  return out;
}

namespace {
int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}
}  // namespace

Bytes from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) fail(ErrorCode::BadLength, "odd hex length");
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    int hi = hex_value(hex[2 * i]);
    int lo = hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) fail(ErrorCode::BadLength, "invalid hex digit");
    out[i] = static_cast<std::uint8_t>((hi << 4) | lo);
  }
  return out;
}

std::string to_base64(ByteView data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(),
                          static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

Bytes from_base64(std::string_view text) {
  if (text.size() % 4 != 0) fail(ErrorCode::BadLength, "base64 length");
  Bytes out(3 * text.size() / 4);
  int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                          static_cast<int>(text.size()));
  if (n < 0) fail(ErrorCode::BadLength, "invalid base64");
  // EVP_DecodeBlock does not strip padding.
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

Bytes to_bytes(std::string_view text) { return Bytes(text.begin(), text.end()); }

Bytes concat(std::initializer_list<ByteView> parts) {
  Bytes out;
  for (auto p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

Bytes xor_bytes(ByteView a, ByteView b) {
  if (a.size() != b.size()) fail(ErrorCode::BadLength, "xor operands differ in length");
  Bytes out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] ^ b[i];
  return out;
}

void append_u32_be(Bytes& out, std::uint32_t value) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(value >> shift));
}

void append_u64_be(Bytes& out, std::uint64_t value) {
  for (int shift = 56; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(value >> shift));
}

bool contains_subsequence(ByteView haystack, ByteView needle) {
  if (needle.empty()) return true;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

KeyId::KeyId(std::uint64_t tag, std::uint64_t counter) {
  for (int i = 0; i < 8; ++i) {
    raw_[i] = static_cast<std::uint8_t>(tag >> (56 - 8 * i));
    raw_[8 + i] = static_cast<std::uint8_t>(counter >> (56 - 8 * i));
  }
}

KeyId KeyId::from_hex(std::string_view hex) {
  if (hex.size() != 2 * kSize) fail(ErrorCode::UnknownPpkId, "key id must be 32 hex digits");
  Bytes raw;
  try {
    raw = qsvpn::from_hex(hex);
  } catch (const Error&) {
    fail(ErrorCode::UnknownPpkId, "key id is not hex");
  }
  std::array<std::uint8_t, kSize> a{};
  std::copy(raw.begin(), raw.end(), a.begin());
  return KeyId(a);
}

std::uint64_t KeyId::tag() const noexcept {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | raw_[i];
  return v;
}

std::uint64_t KeyId::counter() const noexcept {
  std::uint64_t v = 0;
  for (int i = 8; i < 16; ++i) v = (v << 8) | raw_[i];
  return v;
}

std::string KeyId::hex() const { return to_hex(raw_); }

std::uint64_t source_tag(std::string_view name) {
  unsigned char digest[SHA512_DIGEST_LENGTH];
  SHA512(reinterpret_cast<const unsigned char*>(name.data()), name.size(), digest);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | digest[i];
  return v;
}

NodePair::NodePair(NodeId a, NodeId b) {
  if (b < a) std::swap(a, b);
  first = std::move(a);
  second = std::move(b);
}

}  // namespace qsvpn
