#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "qsvpn/common/bytes.hpp"
#include "qsvpn/common/rng.hpp"

namespace qsvpn::kem {

struct KemParams {
  std::string name;
  std::size_t ek_len = 0;
  std::size_t dk_len = 0;
  std::size_t ct_len = 0;
  std::size_t ss_len = 0;
};

struct KemKeyPair {
  Bytes ek;
  Bytes dk;
  KemParams params;
};

struct Encapsulation {
  Bytes ct;
  Bytes ss;
};

// Parameter sets registered by default. Lengths follow the ML-KEM parameter
// table (encapsulation key, decapsulation key, ciphertext, shared secret).
const KemParams& ml_kem_512();
const KemParams& ml_kem_768();
const KemParams& ml_kem_1024();
const KemParams& dhkem_p384();

inline constexpr std::string_view kDefaultKemName = "ML-KEM-1024";

class KemProvider {
 public:
  virtual ~KemProvider() = default;

  virtual const KemParams& params() const = 0;
  // Human-readable implementation label, e.g. "stub" or "openssl".
  virtual std::string implementation() const = 0;
  // True when keygen/encaps are reproducible from the construction seed.
  virtual bool deterministic() const = 0;

  virtual KemKeyPair keygen() = 0;
  virtual Encapsulation encaps(ByteView ek) = 0;
  virtual Bytes decaps(ByteView dk, ByteView ct) = 0;
};

/// Deterministic PRF-based stand-in shaped like ML-KEM (same lengths,
/// implicit rejection on tampered ciphertexts). NOT cryptographically
/// secure: anyone holding `ek` can recompute the shared secret. It exists so
/// the key-establishment pipeline runs and is testable without a lattice
/// implementation.
class StubKemProvider : public KemProvider {
 public:
  StubKemProvider(KemParams params, std::uint64_t seed);

  const KemParams& params() const override { return params_; }
  std::string implementation() const override { return "stub (insecure, deterministic)"; }
  bool deterministic() const override { return true; }

  KemKeyPair keygen() override;
  Encapsulation encaps(ByteView ek) override;
  Bytes decaps(ByteView dk, ByteView ct) override;

 private:
  Bytes encrypt_message(ByteView ek, ByteView m) const;

  KemParams params_;
  DeterministicRng rng_;
};

/// Classical DH-based KEM over NIST P-384 via OpenSSL. A real (non
/// post-quantum) provider that proves the slot is interchangeable.
class P384DhKemProvider : public KemProvider {
 public:
  const KemParams& params() const override { return dhkem_p384(); }
  std::string implementation() const override { return "openssl P-384 DHKEM (classical)"; }
  bool deterministic() const override { return false; }

  KemKeyPair keygen() override;
  Encapsulation encaps(ByteView ek) override;
  Bytes decaps(ByteView dk, ByteView ct) override;
};

/// Provider lookup by parameter-set name.
class KemRegistry {
 public:
  using Factory = std::function<std::unique_ptr<KemProvider>(std::uint64_t seed)>;

  // Registry pre-loaded with the stub ML-KEM sets and the P-384 provider.
  static KemRegistry with_builtin();

  void add(const std::string& name, Factory factory);
  bool contains(const std::string& name) const { return factories_.count(name) != 0; }
  std::vector<std::string> names() const;

  std::unique_ptr<KemProvider> create(const std::string& name, std::uint64_t seed = 0) const;

 private:
  std::map<std::string, Factory> factories_;
};

// Convenience wrappers over a registry-created provider.
KemKeyPair kem_keygen(const KemRegistry& registry, const std::string& params_name, std::uint64_t seed);

}  // namespace qsvpn::kem
