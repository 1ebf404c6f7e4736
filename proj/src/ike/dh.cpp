#include "qsvpn/ike/dh.hpp"

#include "qsvpn/common/crypto.hpp"
#include "qsvpn/common/error.hpp"

namespace qsvpn::ike {

namespace {

Bytes be64(std::uint64_t v) {
  Bytes out;
  append_u64_be(out, v);
  return out;
}

std::uint64_t read_be64(ByteView b) {
  if (b.size() != 8) fail(ErrorCode::MalformedKey, "toy group element must be 8 octets");
  std::uint64_t v = 0;
  for (auto x : b) v = (v << 8) | x;
  return v;
}

}  // namespace

// Reduction mod 2^61-1 keeps every intermediate below 2^62, so doubling never overflows.
std::uint64_t ToyModPGroup::mul_mod(std::uint64_t a, std::uint64_t b) {
  a %= kPrime;
  b %= kPrime;
  std::uint64_t r = 0;
  while (b) {
    if (b & 1) {
      r += a;
      if (r >= kPrime) r -= kPrime;
    }
    a <<= 1;
    if (a >= kPrime) a -= kPrime;
    b >>= 1;
  }
  return r;
}

std::uint64_t ToyModPGroup::pow_mod(std::uint64_t base, std::uint64_t exp) {
  std::uint64_t r = 1;
  base %= kPrime;
  while (exp) {
    if (exp & 1) r = mul_mod(r, base);
    base = mul_mod(base, base);
    exp >>= 1;
  }
  return r;
}

DhKeyPair ToyModPGroup::generate(DeterministicRng& rng) const {
  std::uint64_t x = 2 + rng.next_u64() % (kPrime - 3);
  return {be64(x), be64(pow_mod(kGenerator, x))};
}

Bytes ToyModPGroup::derive(ByteView private_key, ByteView peer_public) const {
  std::uint64_t y = read_be64(peer_public);
  if (y <= 1 || y >= kPrime - 1) fail(ErrorCode::MalformedKey, "toy group element out of range");
  return be64(pow_mod(y, read_be64(private_key)));
}

DhKeyPair P384Group::generate(DeterministicRng&) const {
  auto kp = crypto::p384_generate();
  return {std::move(kp.private_scalar), std::move(kp.public_point)};
}

Bytes P384Group::derive(ByteView private_key, ByteView peer_public) const {
  try {
    return crypto::p384_derive(private_key, peer_public);
  } catch (const Error& e) {
    fail(ErrorCode::MalformedKey, e.what());
  }
}

std::unique_ptr<DhProvider> make_dh_provider(const std::string& name) {
  if (name == "toy") return std::make_unique<ToyModPGroup>();
  if (name == "p384") return std::make_unique<P384Group>();
  fail(ErrorCode::UnknownParams, "unknown DH group " + name);
}

}  // namespace qsvpn::ike
