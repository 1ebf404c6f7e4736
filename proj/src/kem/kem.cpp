#include "qsvpn/kem/kem.hpp"

#include "qsvpn/common/crypto.hpp"
#include "qsvpn/common/error.hpp"
#include "qsvpn/kem/kdf.hpp"

namespace qsvpn::kem {

const KemParams& ml_kem_512() {
  static const KemParams p{"ML-KEM-512", 800, 1632, 768, 32};
  return p;
}
const KemParams& ml_kem_768() {
  static const KemParams p{"ML-KEM-768", 1184, 2400, 1088, 32};
  return p;
}
const KemParams& ml_kem_1024() {
  static const KemParams p{"ML-KEM-1024", 1568, 3168, 1568, 32};
  return p;
}
const KemParams& dhkem_p384() {
  static const KemParams p{"DHKEM-P384", crypto::kP384PointSize, crypto::kP384ScalarSize + crypto::kP384PointSize,
                           crypto::kP384PointSize, 32};
  return p;
}

namespace {

constexpr std::size_t kSeedSize = 32;

Bytes expand(ByteView secret, std::string_view label, std::size_t len) {
  return kdf_expand(secret, to_bytes(label), len * 8);
}

Bytes head(ByteView b, std::size_t n) { return Bytes(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(n)); }

}  // namespace

// Stub layout:
//   ek = E(d, "ek")
//   dk = E(d, "dk") || ek || H(ek)[:32] || z
//   ct = (m xor H(ek)[32:64]) || E(H(ek)[:32] || m, "ct")
//   ss = HMAC(H(ek)[:32], "ss" || m || H(ct))[:ss_len]
// A ciphertext that fails re-encryption yields HMAC(z, "reject" || ct).
StubKemProvider::StubKemProvider(KemParams params, std::uint64_t seed) : params_(std::move(params)), rng_(seed) {
  if (params_.ek_len == 0 || params_.ct_len <= kSeedSize || params_.ss_len == 0 || params_.ss_len > 64 ||
      params_.dk_len <= params_.ek_len + 2 * kSeedSize)
    fail(ErrorCode::UnknownParams, "parameter set unusable by stub provider: " + params_.name);
}

KemKeyPair StubKemProvider::keygen() {
  Bytes d = rng_.bytes(kSeedSize);
  Bytes z = rng_.bytes(kSeedSize);
  Bytes ek = expand(d, "stub-kem/ek", params_.ek_len);
  Bytes h = crypto::sha512(ek);
  Bytes dk = expand(d, "stub-kem/dk", params_.dk_len - params_.ek_len - 2 * kSeedSize);
  dk.insert(dk.end(), ek.begin(), ek.end());
  dk.insert(dk.end(), h.begin(), h.begin() + kSeedSize);
  dk.insert(dk.end(), z.begin(), z.end());
  return {std::move(ek), std::move(dk), params_};
}

Bytes StubKemProvider::encrypt_message(ByteView ek, ByteView m) const {
  Bytes h = crypto::sha512(ek);
  Bytes mask(h.begin() + kSeedSize, h.end());
  Bytes ct = xor_bytes(m, mask);
  Bytes body = expand(concat({ByteView(h).first(kSeedSize), m}), "stub-kem/ct", params_.ct_len - kSeedSize);
  ct.insert(ct.end(), body.begin(), body.end());
  return ct;
}

Encapsulation StubKemProvider::encaps(ByteView ek) {
  if (ek.size() != params_.ek_len) fail(ErrorCode::MalformedKey, "encapsulation key length " + std::to_string(ek.size()));
  Bytes m = rng_.bytes(kSeedSize);
  Bytes ct = encrypt_message(ek, m);
  Bytes h = crypto::sha512(ek);
  Bytes ss = crypto::hmac_sha512(ByteView(h).first(kSeedSize), concat({to_bytes("stub-kem/ss"), m, crypto::sha512(ct)}));
  return {std::move(ct), head(ss, params_.ss_len)};
}

Bytes StubKemProvider::decaps(ByteView dk, ByteView ct) {
  if (dk.size() != params_.dk_len) fail(ErrorCode::MalformedKey, "decapsulation key length " + std::to_string(dk.size()));
  if (ct.size() != params_.ct_len) fail(ErrorCode::MalformedCiphertext, "ciphertext length " + std::to_string(ct.size()));
  const std::size_t off = params_.dk_len - params_.ek_len - 2 * kSeedSize;
  ByteView ek = dk.subspan(off, params_.ek_len);
  ByteView hek = dk.subspan(off + params_.ek_len, kSeedSize);
  ByteView z = dk.subspan(off + params_.ek_len + kSeedSize, kSeedSize);
  Bytes h = crypto::sha512(ek);
  Bytes m = xor_bytes(ct.first(kSeedSize), ByteView(h).subspan(kSeedSize));
  Bytes expected = encrypt_message(ek, m);
  Bytes ss = crypto::constant_time_equal(expected, ct)
                 ? crypto::hmac_sha512(hek, concat({to_bytes("stub-kem/ss"), m, crypto::sha512(ct)}))
                 : crypto::hmac_sha512(z, concat({to_bytes("stub-kem/reject"), ct}));
  return head(ss, params_.ss_len);
}

// DHKEM: ct is an ephemeral public point; ss = HMAC(Z, "dhkem" || ct || ek).
namespace {
Bytes dhkem_secret(ByteView z, ByteView ct, ByteView ek) {
  return head(crypto::hmac_sha512(z, concat({to_bytes("dhkem-p384"), ct, ek})), dhkem_p384().ss_len);
}
}  // namespace

KemKeyPair P384DhKemProvider::keygen() {
  auto kp = crypto::p384_generate();
  Bytes dk = concat({kp.private_scalar, kp.public_point});
  return {kp.public_point, std::move(dk), dhkem_p384()};
}

Encapsulation P384DhKemProvider::encaps(ByteView ek) {
  if (ek.size() != crypto::kP384PointSize) fail(ErrorCode::MalformedKey, "encapsulation key length");
  auto eph = crypto::p384_generate();
  Bytes z = crypto::p384_derive(eph.private_scalar, ek);
  Bytes ss = dhkem_secret(z, eph.public_point, ek);
  return {eph.public_point, std::move(ss)};
}

Bytes P384DhKemProvider::decaps(ByteView dk, ByteView ct) {
  if (dk.size() != dhkem_p384().dk_len) fail(ErrorCode::MalformedKey, "decapsulation key length");
  if (ct.size() != crypto::kP384PointSize) fail(ErrorCode::MalformedCiphertext, "ciphertext length");
  ByteView priv = dk.first(crypto::kP384ScalarSize);
  ByteView ek = dk.subspan(crypto::kP384ScalarSize);
  Bytes z;
  try {
    z = crypto::p384_derive(priv, ct);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MalformedKey) fail(ErrorCode::MalformedCiphertext, "ciphertext is not a curve point");
    throw;
  }
  return dhkem_secret(z, ct, ek);
}

KemRegistry KemRegistry::with_builtin() {
  KemRegistry r;
  for (const KemParams* p : {&ml_kem_512(), &ml_kem_768(), &ml_kem_1024()}) {
    KemParams params = *p;
    r.add(params.name, [params](std::uint64_t seed) { return std::make_unique<StubKemProvider>(params, seed); });
  }
  r.add(dhkem_p384().name, [](std::uint64_t) { return std::make_unique<P384DhKemProvider>(); });
  return r;
}

void KemRegistry::add(const std::string& name, Factory factory) { factories_[name] = std::move(factory); }

std::vector<std::string> KemRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, f] : factories_) out.push_back(name);
  return out;
}

std::unique_ptr<KemProvider> KemRegistry::create(const std::string& name, std::uint64_t seed) const {
  auto it = factories_.find(name);
  if (it == factories_.end()) fail(ErrorCode::UnknownParams, name);
  return it->second(seed);
}

KemKeyPair kem_keygen(const KemRegistry& registry, const std::string& params_name, std::uint64_t seed) {
  return registry.create(params_name, seed)->keygen();
}

}  // namespace qsvpn::kem
