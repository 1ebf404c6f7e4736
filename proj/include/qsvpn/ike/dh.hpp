#pragma once

#include <memory>
#include <string>

#include "qsvpn/common/bytes.hpp"
#include "qsvpn/common/rng.hpp"

namespace qsvpn::ike {

struct DhKeyPair {
  Bytes private_key;
  Bytes public_key;
};

/// Classical ephemeral agreement used in SA_INIT.
class DhProvider {
 public:
  virtual ~DhProvider() = default;
  virtual std::string name() const = 0;
  virtual bool secure() const = 0;
  virtual DhKeyPair generate(DeterministicRng& rng) const = 0;
  // Throws MalformedKey on an invalid peer value.
  virtual Bytes derive(ByteView private_key, ByteView peer_public) const = 0;
};

// Multiplicative group mod the Mersenne prime 2^61 - 1, generator 3.
// NOT SECURE: deterministic desk-scale runs only.
class ToyModPGroup : public DhProvider {
 public:
  static constexpr std::uint64_t kPrime = (std::uint64_t{1} << 61) - 1;
  static constexpr std::uint64_t kGenerator = 3;

  std::string name() const override { return "toy-modp-2^61-1 (NOT SECURE)"; }
  bool secure() const override { return false; }
  DhKeyPair generate(DeterministicRng& rng) const override;
  Bytes derive(ByteView private_key, ByteView peer_public) const override;

  static std::uint64_t mul_mod(std::uint64_t a, std::uint64_t b);
  static std::uint64_t pow_mod(std::uint64_t base, std::uint64_t exp);
};

// NIST P-384 (IKEv2 group 20) via OpenSSL; key generation draws from the
// system RNG, so runs using it are not byte-reproducible.
class P384Group : public DhProvider {
 public:
  std::string name() const override { return "group 20 (P-384)"; }
  bool secure() const override { return true; }
  DhKeyPair generate(DeterministicRng& rng) const override;
  Bytes derive(ByteView private_key, ByteView peer_public) const override;
};

// "toy" or "p384"; anything else is UnknownParams.
std::unique_ptr<DhProvider> make_dh_provider(const std::string& name);

}  // namespace qsvpn::ike
