#include <doctest.h>

#include <set>
#include <thread>

#include "oracle/sha512_oracle.hpp"
#include "qsvpn/kem/kdf.hpp"
#include "qsvpn/kem/kem.hpp"
#include "qsvpn/kem/kms_establish.hpp"
#include "unit/test_support.hpp"

using namespace qsvpn;
using namespace qsvpn::kem;
using keystore::KeyStore;

namespace {

oracle::Octets oct(ByteView b) { return {b.begin(), b.end()}; }
oracle::Octets oct(std::string_view s) { return {s.begin(), s.end()}; }
oracle::Octets cat(std::initializer_list<oracle::Octets> parts) {
  oracle::Octets out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}
oracle::Octets slice(const oracle::Octets& v, std::size_t off, std::size_t n) {
  return {v.begin() + static_cast<std::ptrdiff_t>(off), v.begin() + static_cast<std::ptrdiff_t>(off + n)};
}

// Independent restatement of the stub construction: recover m from ct and
// recompute the honest and the rejection secrets.
struct StubOracle {
  oracle::Octets ek, hek, z;
  std::size_t ss_len;

  StubOracle(const KemKeyPair& kp) : ek(oct(kp.ek)), ss_len(kp.params.ss_len) {
    auto off = kp.dk.size() - kp.ek.size() - 64;
    hek = slice(oct(kp.dk), off + kp.ek.size(), 32);
    z = slice(oct(kp.dk), off + kp.ek.size() + 32, 32);
  }
  oracle::Octets honest(const oracle::Octets& ct) const {
    auto h = oracle::sha512(ek);
    oracle::Octets m(32);
    for (int i = 0; i < 32; ++i) m[i] = ct[i] ^ h[32 + i];
    return slice(oracle::hmac_sha512(slice(h, 0, 32), cat({oct("stub-kem/ss"), m, oracle::sha512(ct)})), 0, ss_len);
  }
  oracle::Octets reject(const oracle::Octets& ct) const {
    return slice(oracle::hmac_sha512(z, cat({oct("stub-kem/reject"), ct})), 0, ss_len);
  }
};

struct Pair {
  KeyStore a{"A"};
  KeyStore b{"B"};
  KmsControlChannel channel{"A", "B", to_bytes("pair-credential-A-B")};
};

}  // namespace

TEST_CASE("kdf_expand matches the reference counter-mode KDF") {
  Bytes secret = from_hex("000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f");
  for (std::size_t bits : {8u, 256u, 512u, 520u, 1024u, 4096u}) {
    Bytes ctx = kms_context("E1", "W1");
    Bytes got = kdf_expand(secret, ctx, bits);
    CHECK(got.size() == bits / 8);
    CHECK(oct(got) == oracle::kdf_counter(oct(secret), oct(ctx), bits / 8));
  }
  // context layout
  CHECK(oct(kms_context("A", "B")) == cat({oct("QSM-KMS-v1"), {0}, oct("A"), {0}, oct("B")}));
}

TEST_CASE("kdf_expand: determinism, domain separation, bad length") {
  Bytes s(32, 0x42);
  CHECK(kdf_expand(s, to_bytes("x"), 256) == kdf_expand(s, to_bytes("x"), 256));
  auto a = kdf_expand(s, kms_context("A", "B"), 256);
  auto b = kdf_expand(s, kms_context("B", "A"), 256);
  CHECK(a != b);
  CHECK(oct(b) == oracle::kdf_counter(oct(s), oct(kms_context("B", "A")), 32));
  CHECK_ERROR(kdf_expand(s, {}, 0), ErrorCode::BadLength);
  CHECK_ERROR(kdf_expand(s, {}, 12), ErrorCode::BadLength);
}

TEST_CASE("registry: parameter table and lookup") {
  auto reg = KemRegistry::with_builtin();
  auto kp = kem_keygen(reg, "ML-KEM-1024", 7);
  CHECK(kp.ek.size() == 1568);
  CHECK(kp.dk.size() == 3168);
  auto p = reg.create("ML-KEM-1024", 7);
  auto enc = p->encaps(kp.ek);
  CHECK(enc.ct.size() == 1568);
  CHECK(enc.ss.size() == 32);
  CHECK(reg.create("ML-KEM-768")->params().ct_len == 1088);
  CHECK(reg.create("ML-KEM-512")->params().ek_len == 800);
  CHECK_ERROR(reg.create("ML-KEM-2048"), ErrorCode::UnknownParams);
  CHECK_ERROR(kem_keygen(reg, "nope", 1), ErrorCode::UnknownParams);
}

TEST_CASE("stub provider: determinism under seed") {
  auto reg = KemRegistry::with_builtin();
  auto k1 = kem_keygen(reg, "ML-KEM-1024", 99);
  auto k2 = kem_keygen(reg, "ML-KEM-1024", 99);
  CHECK(k1.ek == k2.ek);
  CHECK(k1.dk == k2.dk);
  CHECK(kem_keygen(reg, "ML-KEM-1024", 100).ek != k1.ek);
  // pinned vector: first octets of the seed-1 key and ciphertext
  auto p = reg.create("ML-KEM-1024", 1);
  auto kp = p->keygen();
  auto enc = p->encaps(kp.ek);
  CHECK(to_hex(ByteView(kp.ek).first(8)) == "d66655dec64e3406");
  CHECK(to_hex(enc.ss) == "b43c6bbc43921e3b73d111242fadb5a7422e602bb13e2f4489db77b0a27b88ec");
}

TEST_CASE("stub provider: shared secret agrees with the construction oracle") {
  StubKemProvider p(ml_kem_1024(), 3);
  for (int i = 0; i < 20; ++i) {
    auto kp = p.keygen();
    StubOracle o(kp);
    auto enc = p.encaps(kp.ek);
    CHECK(oct(enc.ss) == o.honest(oct(enc.ct)));
    CHECK(oct(p.decaps(kp.dk, enc.ct)) == o.honest(oct(enc.ct)));
  }
}

TEST_CASE("stub provider: flipped ciphertext bit triggers implicit rejection") {
  StubKemProvider p(ml_kem_1024(), 4);
  auto kp = p.keygen();
  StubOracle o(kp);
  auto enc = p.encaps(kp.ek);
  for (std::size_t bit : {0u, 7u, 255u, 256u, 4000u, 1568u * 8 - 1}) {
    Bytes ct = enc.ct;
    ct[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    Bytes ss = p.decaps(kp.dk, ct);
    CHECK(ss != enc.ss);
    CHECK(oct(ss) == o.reject(oct(ct)));
  }
}

TEST_CASE("encaps randomness: 100 encapsulations give distinct ciphertexts") {
  auto reg = KemRegistry::with_builtin();
  for (const std::string name : {"ML-KEM-1024", "DHKEM-P384"}) {
    auto p = reg.create(name, 5);
    auto kp = p->keygen();
    std::set<Bytes> cts;
    for (int i = 0; i < 100; ++i) cts.insert(p->encaps(kp.ek).ct);
    CHECK(cts.size() == 100);
  }
}

TEST_CASE("malformed inputs") {
  auto reg = KemRegistry::with_builtin();
  for (const std::string name : {"ML-KEM-1024", "DHKEM-P384"}) {
    CAPTURE(name);
    auto p = reg.create(name, 6);
    auto kp = p->keygen();
    Bytes short_ek(kp.ek.begin(), kp.ek.end() - 1);
    CHECK_ERROR(p->encaps(short_ek), ErrorCode::MalformedKey);
    auto enc = p->encaps(kp.ek);
    Bytes long_ct = enc.ct;
    long_ct.push_back(0);
    CHECK_ERROR(p->decaps(kp.dk, long_ct), ErrorCode::MalformedCiphertext);
    CHECK_ERROR(p->decaps(kp.dk, Bytes{}), ErrorCode::MalformedCiphertext);
  }
  P384DhKemProvider dh;
  auto kp = dh.keygen();
  Bytes not_a_point(97, 0x04);
  CHECK_ERROR(dh.decaps(kp.dk, not_a_point), ErrorCode::MalformedCiphertext);
}

TEST_CASE("correctness: 1000 roundtrips per provider") {
  auto reg = KemRegistry::with_builtin();
  for (const std::string& name : reg.names()) {
    CAPTURE(name);
    auto p = reg.create(name, 11);
    int ok = 0;
    for (int i = 0; i < 1000; ++i) {
      auto kp = p->keygen();
      auto enc = p->encaps(kp.ek);
      ok += p->decaps(kp.dk, enc.ct) == enc.ss;
    }
    CHECK(ok == 1000);
  }
}

TEST_CASE("establish_kms_key with every registered provider") {
  auto reg = KemRegistry::with_builtin();
  for (const std::string& name : reg.names()) {
    CAPTURE(name);
    Pair pr;
    auto provider = reg.create(name, 21);
    KmsKeyEstablisher est({"A", &pr.a}, {"B", &pr.b}, pr.channel, *provider);

    SUBCASE("256 bits: one identical block at each end") {
      auto r = establish_kms_key(est, 256, from_s(5));
      CHECK(pr.a.block_count() == 1);
      CHECK(pr.b.block_count() == 1);
      auto ka = pr.a.fetch_by_id(r.initiator_block.key_id);
      auto kb = pr.b.fetch_by_id(r.initiator_block.key_id);
      CHECK(ka.ppk == kb.ppk);
      CHECK(ka.ppk.size() == 32);
      CHECK(ka.technology == keystore::Technology::PqcKem);
      CHECK(r.initiator_block.peer == NodeId("B"));
      CHECK(r.responder_block.peer == NodeId("A"));
      CHECK(r.session.shared_secret.size() == provider->params().ss_len);
      CHECK(pr.channel.frames_delivered() == 3);
    }
    SUBCASE("1024 bits equal the reference KDF over the session secret") {
      auto r = establish_kms_key(est, 1024, from_s(1));
      CHECK(r.initiator_block.bytes.size() == 128);
      CHECK(oct(r.initiator_block.bytes) ==
            oracle::kdf_counter(oct(r.session.shared_secret), oct(kms_context("A", "B")), 128));
      CHECK(r.initiator_block.bytes == r.responder_block.bytes);
    }
    SUBCASE("channel severed mid-exchange: nothing ingested anywhere") {
      for (std::size_t after : {0u, 1u, 2u}) {
        pr.channel.sever_after(after);
        CHECK_ERROR(est.establish(256, from_s(1)), ErrorCode::ChannelDown);
        CHECK(pr.a.block_count() == 0);
        CHECK(pr.b.block_count() == 0);
      }
      pr.channel.restore();
      est.establish(256, from_s(2));
      CHECK(pr.a.block_count() == 1);
      CHECK(pr.b.block_count() == 1);
    }
    SUBCASE("tampered frame: AuthFailure, nothing ingested") {
      pr.channel.corrupt_next_frame();
      CHECK_ERROR(est.establish(256, from_s(1)), ErrorCode::AuthFailure);
      CHECK(pr.a.block_count() + pr.b.block_count() == 0);
    }
  }
}

TEST_CASE("mismatched credentials fail authentication") {
  KeyStore a{"A"}, b{"B"};
  KmsControlChannel ch("A", "B", to_bytes("cred-1"), to_bytes("cred-2"));
  StubKemProvider p(ml_kem_1024(), 1);
  KmsKeyEstablisher est({"A", &a}, {"B", &b}, ch, p);
  CHECK_ERROR(est.establish(256, SimTime{0}), ErrorCode::AuthFailure);
  CHECK(a.block_count() + b.block_count() == 0);
}

TEST_CASE("sequential establishments get fresh ids under the pair source") {
  Pair pr;
  StubKemProvider p(ml_kem_1024(), 2);
  KmsKeyEstablisher est({"B", &pr.b}, {"A", &pr.a}, pr.channel, p);
  CHECK(est.source_id() == "pqc:A~B");
  std::set<KeyId> ids;
  for (int i = 0; i < 8; ++i) ids.insert(est.establish(256, from_s(i)).initiator_block.key_id);
  CHECK(ids.size() == 8);
  CHECK(pr.a.buffer_level("pqc:A~B").available_blocks == 8);
  CHECK(pr.b.buffer_level("pqc:A~B").available_bits == 8 * 256);
  CHECK(est.sessions_completed() == 8);
}

TEST_CASE("distinct pairs establish concurrently") {
  KeyStore hub{"H"};
  std::vector<std::unique_ptr<KeyStore>> spokes;
  std::vector<std::unique_ptr<KmsControlChannel>> channels;
  std::vector<std::unique_ptr<StubKemProvider>> providers;
  std::vector<std::unique_ptr<KmsKeyEstablisher>> ests;
  for (int i = 0; i < 4; ++i) {
    std::string name = "S" + std::to_string(i);
    spokes.push_back(std::make_unique<KeyStore>(name));
    channels.push_back(std::make_unique<KmsControlChannel>("H", name, to_bytes("c" + name)));
    providers.push_back(std::make_unique<StubKemProvider>(ml_kem_768(), i));
    ests.push_back(std::make_unique<KmsKeyEstablisher>(KmsEndpoint{"H", &hub}, KmsEndpoint{name, spokes.back().get()},
                                                       *channels.back(), *providers.back()));
  }
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i)
    threads.emplace_back([&, i] {
      for (int k = 0; k < 25; ++k) ests[i]->establish(256, SimTime{k});
    });
  for (auto& t : threads) t.join();
  CHECK(hub.block_count() == 100);
  for (auto& s : spokes) CHECK(s->block_count() == 25);
}
