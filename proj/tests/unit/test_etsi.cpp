#include <doctest.h>

#include <random>
#include <set>

#include "qsvpn/etsi/etsi004.hpp"
#include "qsvpn/etsi/etsi014.hpp"
#include "qsvpn/etsi/http_server.hpp"
#include "unit/test_support.hpp"

using namespace qsvpn;
using namespace qsvpn::etsi;
using keystore::KeyBlock;
using keystore::KeyStore;

namespace {

// Two nodes sharing `blocks` identical 256-bit blocks from one link.
struct PairFixture {
  KeyStore a{"A"};
  KeyStore b{"B"};
  keystore::DirectPeerSync sync;
  KeyIdDirectory directory;
  Etsi014Endpoint ea{a, directory, &sync};
  Etsi014Endpoint eb{b, directory, &sync};
  Etsi004Service streams;
  std::uint64_t next = 1;

  explicit PairFixture(int blocks = 7) {
    sync.attach(a);
    sync.attach(b);
    streams.attach(a);
    streams.attach(b);
    add_blocks(blocks);
  }
  void add_blocks(int n) {
    for (int i = 0; i < n; ++i, ++next) {
      Bytes material(32);
      for (int k = 0; k < 32; ++k) material[k] = static_cast<std::uint8_t>(next * 31 + k);
      KeyId id(source_tag("qkd-ab"), next);
      SimTime t{static_cast<std::int64_t>(next)};
      a.ingest(KeyBlock{id, material, "qkd-ab", "B", keystore::Technology::DvQkd, t, t + from_s(3600)});
      b.ingest(KeyBlock{id, material, "qkd-ab", "A", keystore::Technology::DvQkd, t, t + from_s(3600)});
    }
  }
};

std::vector<KeyId> ids_of(const Etsi014KeyContainer& c) {
  std::vector<KeyId> out;
  for (const auto& k : c.keys) out.push_back(k.key_id);
  return out;
}

}  // namespace

TEST_CASE("014 status counts and accounting") {
  PairFixture f;
  auto s = f.ea.status("B");
  CHECK(s.stored_key_count == 7);
  CHECK(s.key_size == 256);
  CHECK_ERROR(f.ea.status("Z"), ErrorCode::UnknownPeer);
  f.a.reserve({"B"});
  f.a.reserve({"B"});
  CHECK(f.ea.status("B").stored_key_count == 5);
}

TEST_CASE("014 get_key / get_key_with_ids") {
  PairFixture f;
  auto c = f.ea.get_key("B", 2, 256);
  REQUIRE(c.keys.size() == 2);
  CHECK(f.ea.status("B").stored_key_count == 5);
  CHECK(f.a.state_of(c.keys[0].key_id) == keystore::KeyState::Reserved);
  // peer saw the reservation and will not hand the same block out
  CHECK(f.eb.status("A").stored_key_count == 5);

  auto d = f.eb.get_key_with_ids("A", ids_of(c));
  REQUIRE(d.keys.size() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(d.keys[i].key_id == c.keys[i].key_id);
    CHECK(d.keys[i].key == c.keys[i].key);
  }
  CHECK(f.b.state_of(c.keys[0].key_id) == keystore::KeyState::Consumed);
  CHECK_ERROR(f.eb.get_key_with_ids("A", ids_of(c)), ErrorCode::KeyAlreadyConsumed);
  CHECK_ERROR(f.eb.get_key_with_ids("A", {KeyId(source_tag("forged"), 9)}), ErrorCode::UnknownPpkId);
  // only the target of an issued key may retrieve it
  auto e = f.ea.get_key("B", 1, 256);
  CHECK_ERROR(f.ea.get_key_with_ids("B", ids_of(e)), ErrorCode::UnknownPpkId);
}

TEST_CASE("014 size and count validation") {
  PairFixture f;
  CHECK_ERROR(f.ea.get_key("B", 1, 250), ErrorCode::BadSize);
  CHECK_ERROR(f.ea.get_key("B", 0, 256), ErrorCode::BadSize);
  CHECK_ERROR(f.ea.get_key("B", 100, 256), ErrorCode::InsufficientKeyMaterial);
  CHECK(f.ea.status("B").stored_key_count == 7);
  // shorter keys are a prefix of the block and the peer gets the same prefix
  auto c = f.ea.get_key("B", 1, 128);
  CHECK(c.keys[0].key.size() == 16);
  CHECK(f.eb.get_key_with_ids("A", ids_of(c)).keys[0].key == c.keys[0].key);
  // requests larger than any block fail without leaking reservations
  Etsi014Endpoint wide(f.a, f.directory, &f.sync, Etsi014Config{256, 8, 1024, 128, std::nullopt});
  CHECK_ERROR(wide.get_key("B", 1, 512), ErrorCode::InsufficientKeyMaterial);
  CHECK(f.ea.status("B").stored_key_count == 6);
}

TEST_CASE("014 wire records round-trip through JSON") {
  PairFixture f;
  EtsiHttpServer router;
  router.add_endpoint(f.ea);
  router.add_endpoint(f.eb);
  Etsi014Client ca("A", router.in_process_transport());
  Etsi014Client cb("B", router.in_process_transport());
  CHECK(ca.status("B").stored_key_count == 7);
  auto c = ca.get_key("B", 3, 256);
  CHECK(c.keys.size() == 3);
  auto d = cb.get_key_with_ids("A", ids_of(c));
  CHECK(d.keys[2].key == c.keys[2].key);
  CHECK_ERROR(cb.get_key_with_ids("A", ids_of(c)), ErrorCode::KeyAlreadyConsumed);
  CHECK_ERROR(ca.get_key("B", 1, 250), ErrorCode::BadSize);
  CHECK_ERROR(ca.status("Q"), ErrorCode::UnknownPeer);

  json wire = c.to_json();
  CHECK(wire["keys"][0]["key_ID"].get<std::string>().size() == 32);
  CHECK(from_base64(wire["keys"][0]["key"].get<std::string>()) == c.keys[0].key);
  auto resp = router.dispatch({"POST", "/api/v1/keys/B/enc_keys", "A", json{{"number", 1}, {"size", 250}}});
  CHECK(resp.status == 400);
  CHECK(resp.body["error"] == "BadSize");
  resp = router.dispatch({"POST", "/api/v1/keys/B/enc_keys", "A", json{{"number", 50}}});
  CHECK(resp.status == 503);
}

TEST_CASE("004 open / get_key / close") {
  PairFixture f;
  auto ksid = f.streams.open_connect("A", "B", 256);
  CHECK(f.streams.session(ksid).state == SessionState::Open);
  CHECK(f.streams.open_connect("A", "B", 256) != ksid);

  auto a0 = f.streams.get_key(ksid, "A", 0);
  auto b0 = f.streams.get_key(ksid, "B", 0);
  CHECK(a0.size() == 32);
  CHECK(a0 == b0);
  CHECK_ERROR(f.streams.get_key(ksid, "A", 2), ErrorCode::OutOfOrderIndex);
  CHECK_ERROR(f.streams.get_key(ksid, "A", 0), ErrorCode::OutOfOrderIndex);
  // B can run ahead of A
  auto b1 = f.streams.get_key(ksid, "B", 1);
  CHECK(f.streams.get_key(ksid, "A", 1) == b1);

  f.streams.get_key(ksid, "A", 2);  // drawn but never collected by B
  auto before = f.b.buffer_level("qkd-ab");
  f.streams.close(ksid);
  CHECK(f.streams.session(ksid).state == SessionState::Closed);
  CHECK(f.b.buffer_level("qkd-ab").expired_bits == before.expired_bits + 256);
  CHECK_ERROR(f.streams.get_key(ksid, "B", 2), ErrorCode::ClosedSession);
  f.streams.close(ksid);  // idempotent
  CHECK_ERROR(f.streams.close("nope"), ErrorCode::UnknownSession);
}

TEST_CASE("004 chunk sizes and key source checks") {
  PairFixture f;
  CHECK_ERROR(f.streams.open_connect("A", "B", 12), ErrorCode::BadSize);
  KeyStore c{"C"};
  f.streams.attach(c);
  CHECK_ERROR(f.streams.open_connect("A", "C", 256), ErrorCode::NoKeySourceForPair);
  f.streams.set_key_source_probe([](const NodeId& s, const NodeId& d) { return s == NodeId("A") && d == NodeId("C"); });
  CHECK_NOTHROW(f.streams.open_connect("A", "C", 256));

  auto big = f.streams.open_connect("A", "B", 640);  // 256 + 256 + 128
  auto x = f.streams.get_key(big, "B", 0);
  CHECK(x.size() == 80);
  CHECK(f.streams.get_key(big, "A", 0) == x);
  CHECK(f.ea.status("B").stored_key_count == 4);

  auto s = f.streams.open_connect("A", "B", 256);
  for (int i = 0; i < 4; ++i) f.streams.get_key(s, "A", i);
  CHECK_ERROR(f.streams.get_key(s, "A", 4), ErrorCode::InsufficientKeyMaterial);
  CHECK(f.streams.get_key(s, "B", 0).size() == 32);
}

TEST_CASE("property: 1000 random 014/004 interleavings keep endpoints byte-equal") {
  std::mt19937_64 rng(20240917);
  for (int trial = 0; trial < 1000; ++trial) {
    CAPTURE(trial);
    PairFixture f(12);
    std::map<KeyId, Bytes> delivered_a;  // key id -> bytes as seen by the drawing side
    std::vector<std::pair<NodeId, std::vector<KeyId>>> outstanding;
    std::set<KeyId> used;
    auto ksid = f.streams.open_connect("A", "B", 256);
    std::map<NodeId, std::uint64_t> idx{{"A", 0}, {"B", 0}};
    std::map<std::uint64_t, Bytes> chunks;
    bool ok = true;
    for (int step = 0; step < 20 && ok; ++step) {
      NodeId me = (rng() & 1) ? "A" : "B";
      NodeId peer = me == NodeId("A") ? "B" : "A";
      auto& ep = me == NodeId("A") ? f.ea : f.eb;
      try {
        switch (rng() % 3) {
          case 0: {
            auto c = ep.get_key(peer, 1 + rng() % 2, 256);
            for (auto& k : c.keys) {
              ok &= used.insert(k.key_id).second;
              delivered_a[k.key_id] = k.key;
            }
            outstanding.push_back({peer, ids_of(c)});
            break;
          }
          case 1:
            if (!outstanding.empty()) {
              auto [target, ids] = outstanding.back();
              outstanding.pop_back();
              auto& tep = target == NodeId("A") ? f.ea : f.eb;
              for (auto& k : tep.get_key_with_ids(target == NodeId("A") ? "B" : "A", ids).keys)
                ok &= delivered_a.at(k.key_id) == k.key;
            }
            break;
          default: {
            auto chunk = f.streams.get_key(ksid, me, idx[me]);
            auto [it, fresh] = chunks.emplace(idx[me], chunk);
            if (!fresh) ok &= it->second == chunk;
            ++idx[me];
            break;
          }
        }
      } catch (const Error& e) {
        ok &= e.code() == ErrorCode::InsufficientKeyMaterial;
      }
    }
    REQUIRE(ok);
    // Chunks and 014 keys never drew the same block.
    CHECK(f.a.buffer_level("qkd-ab").total_bits() == 12 * 256);
  }
}

TEST_CASE("014 and 004 over a local HTTP socket") {
  PairFixture f;
  EtsiHttpServer server;
  server.add_endpoint(f.ea);
  server.add_endpoint(f.eb);
  server.set_stream_service(f.streams);
  int port = server.start("127.0.0.1", 0);
  REQUIRE(port > 0);
  auto transport = http_transport("127.0.0.1", port);
  Etsi014Client ca("A", transport);
  Etsi014Client cb("B", transport);
  CHECK(ca.status("B").stored_key_count == 7);
  auto c = ca.get_key("B", 2, 256);
  CHECK(cb.get_key_with_ids("A", ids_of(c)).keys[1].key == c.keys[1].key);
  CHECK_ERROR(ca.get_key("B", 1, 250), ErrorCode::BadSize);

  auto open = transport({"POST", "/api/v1/ksid/open_connect", "A",
                         json{{"source", "A"}, {"destination", "B"}, {"qos", {{"key_chunk_size", 256}, {"jitter", 5}}}}});
  REQUIRE(open.status == 200);
  std::string ksid = open.body["key_stream_id"];
  auto ka = transport({"POST", "/api/v1/ksid/get_key", "A", json{{"key_stream_id", ksid}, {"index", 0}}});
  auto kb = transport({"POST", "/api/v1/ksid/get_key", "B", json{{"key_stream_id", ksid}, {"index", 0}}});
  CHECK(ka.body["key_buffer"] == kb.body["key_buffer"]);
  auto bad = transport({"POST", "/api/v1/ksid/get_key", "B", json{{"key_stream_id", ksid}, {"index", 5}}});
  CHECK(bad.body["error"] == "OutOfOrderIndex");
  server.stop();
}
