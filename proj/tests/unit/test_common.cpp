#include <doctest.h>

#include "oracle/sha512_oracle.hpp"
#include "qsvpn/common/bytes.hpp"
#include "qsvpn/common/crypto.hpp"
#include "qsvpn/common/rng.hpp"
#include "qsvpn/common/sim_time.hpp"
#include "unit/test_support.hpp"

using namespace qsvpn;

namespace {
oracle::Octets oct(const Bytes& b) { return {b.begin(), b.end()}; }
}  // namespace

TEST_CASE("oracle reproduces published SHA-512 and HMAC-SHA-512 vectors") {
  // FIPS 180-4 example "abc".
  CHECK(oracle::to_hex(oracle::sha512({'a', 'b', 'c'})) ==
        "ddaf35a193617abacc417349ae20413112e6fa4e89a97ea20a9eeee64b55d39a"
        "2192992a274fc1a836ba3c23a3feebbd454d4423643ce80e2a9ac94fa54ca49f");
  // RFC 4231 test case 2.
  std::string key = "Jefe";
  std::string msg = "what do ya want for nothing?";
  CHECK(oracle::to_hex(oracle::hmac_sha512({key.begin(), key.end()}, {msg.begin(), msg.end()})) ==
        "164b7a7bfcf819e2e395fbe73b56e0a387bd64222e831fd610270cd7ea250554"
        "9758bf75c05a994a6d034f65f8f0e6fdcaeab1a34d4a6b4b636e070a38bce737");
}

TEST_CASE("hmac_sha512 agrees with the oracle across key lengths") {
  DeterministicRng rng(7);
  for (std::size_t klen : {0u, 1u, 16u, 64u, 127u, 128u, 129u, 300u}) {
    Bytes k = rng.bytes(klen);
    Bytes m = rng.bytes(klen * 3 + 5);
    CHECK(oct(crypto::hmac_sha512(k, m)) == oracle::hmac_sha512(oct(k), oct(m)));
    CHECK(oct(crypto::sha512(m)) == oracle::sha512(oct(m)));
  }
}

TEST_CASE("prf_plus follows the IKEv2 chaining construction") {
  DeterministicRng rng(3);
  Bytes key = rng.bytes(48);
  Bytes seed = rng.bytes(40);
  Bytes out = crypto::prf_plus(key, seed, 150);
  REQUIRE(out.size() == 150);
  oracle::Octets t1_in = oct(seed);
  t1_in.push_back(1);
  auto t1 = oracle::hmac_sha512(oct(key), t1_in);
  oracle::Octets t2_in = t1;
  t2_in.insert(t2_in.end(), seed.begin(), seed.end());
  t2_in.push_back(2);
  auto t2 = oracle::hmac_sha512(oct(key), t2_in);
  oracle::Octets expected = t1;
  expected.insert(expected.end(), t2.begin(), t2.end());
  CHECK(oracle::Octets(out.begin(), out.begin() + 128) == expected);
}

TEST_CASE("hex and base64 codecs") {
  DeterministicRng rng(11);
  for (std::size_t n = 0; n < 40; ++n) {
    Bytes b = rng.bytes(n);
    CHECK(from_hex(to_hex(b)) == b);
    CHECK(from_base64(to_base64(b)) == b);
  }
  CHECK(to_base64(to_bytes("foob")) == "Zm9vYg==");
  CHECK_ERROR(from_hex("abc"), ErrorCode::BadLength);
  CHECK_ERROR(from_hex("zz"), ErrorCode::BadLength);
}

TEST_CASE("KeyId layout is tag then counter, big-endian") {
  KeyId id(0x0102030405060708ULL, 0x1112131415161718ULL);
  CHECK(id.hex() == "01020304050607081112131415161718");
  CHECK(id.tag() == 0x0102030405060708ULL);
  CHECK(id.counter() == 0x1112131415161718ULL);
  CHECK(KeyId::from_hex(id.hex()) == id);
  CHECK_ERROR(KeyId::from_hex("0102"), ErrorCode::UnknownPpkId);
}

TEST_CASE("AES-256-GCM seals, opens and rejects tampering") {
  DeterministicRng rng(5);
  Bytes key = rng.bytes(32), nonce = rng.bytes(12), aad = to_bytes("hdr");
  Bytes pt = to_bytes("quantum-safe payload");
  Bytes sealed = crypto::aes256_gcm_seal(key, nonce, aad, pt);
  CHECK(sealed.size() == pt.size() + crypto::kAesGcmTagSize);
  CHECK(crypto::aes256_gcm_open(key, nonce, aad, sealed) == pt);
  sealed[0] ^= 1;
  CHECK_ERROR(crypto::aes256_gcm_open(key, nonce, aad, sealed), ErrorCode::DecryptFailure);
}

TEST_CASE("P-384 ECDH agreement") {
  auto a = crypto::p384_generate();
  auto b = crypto::p384_generate();
  CHECK(a.public_point.size() == crypto::kP384PointSize);
  CHECK(a.public_point[0] == 0x04);
  CHECK(crypto::p384_derive(a.private_scalar, b.public_point) == crypto::p384_derive(b.private_scalar, a.public_point));
  Bytes bad = b.public_point;
  bad[10] ^= 0xff;
  CHECK_ERROR(crypto::p384_derive(a.private_scalar, bad), ErrorCode::MalformedKey);
}

TEST_CASE("sim time helpers") {
  CHECK(from_ms(87.5).count() == 87500);
  CHECK(format_ms(from_ms(87.5)) == "87.500");
  CHECK(format_ms(SimDuration{1}) == "0.001");
}

TEST_CASE("DeterministicRng is reproducible and forks independently") {
  DeterministicRng a(42), b(42);
  CHECK(a.bytes(64) == b.bytes(64));
  DeterministicRng base(9);
  auto f1 = base.fork("x"), f2 = base.fork("x"), f3 = base.fork("y");
  CHECK(f1.next_u64() == f2.next_u64());
  CHECK(f1.next_u64() != f3.next_u64());
}
