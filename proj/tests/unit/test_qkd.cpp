#include <doctest.h>

#include "qsvpn/qkd/qkd_link.hpp"
#include "unit/test_support.hpp"

using namespace qsvpn;
using namespace qsvpn::qkd;
using keystore::KeyStore;

namespace {

struct Fixture {
  KeyStore a{"A"};
  KeyStore b{"B"};
  QkdNetwork net;

  explicit Fixture(double rate = 2000.0, std::uint64_t seed = 1) {
    QkdLinkProfile p;
    p.link_id = "qkd-ab";
    p.a = "A";
    p.b = "B";
    p.technology = keystore::Technology::CvQkd;
    p.skr_bps = rate;
    net.add_link(p, a, b);
    net.seed_stream("qkd-ab", seed);
  }
};

}  // namespace

TEST_CASE("advance: accumulator arithmetic 2000 = 7*256 + 208") {
  Fixture f;
  auto blocks = f.net.advance("qkd-ab", std::chrono::milliseconds(1000));
  CHECK(blocks.size() == 7);
  CHECK(f.a.buffer_level("qkd-ab").available_bits == 1792);
  // 208 bits carried: 48 more bits (24 ms at 2 kbps) complete the next block.
  CHECK(f.net.advance("qkd-ab", std::chrono::milliseconds(23)).empty());
  CHECK(f.net.advance("qkd-ab", std::chrono::milliseconds(1)).size() == 1);
}

TEST_CASE("advance: endpoints receive byte-identical blocks") {
  Fixture f;
  auto blocks = f.net.advance("qkd-ab", std::chrono::seconds(30));
  REQUIRE(blocks.size() > 200);
  for (const auto& blk : blocks) {
    auto at_a = f.a.fetch_by_id(blk.key_id);
    auto at_b = f.b.fetch_by_id(blk.key_id);
    REQUIRE(at_a.ppk == at_b.ppk);
    REQUIRE(at_a.ppk == blk.bytes);
  }
}

TEST_CASE("advance: errors and DOWN links") {
  Fixture f;
  CHECK_ERROR(f.net.advance("nope", std::chrono::seconds(1)), ErrorCode::LinkUnknown);
  CHECK_ERROR(f.net.advance("qkd-ab", SimDuration{0}), ErrorCode::BadLength);
  f.net.inject_event({"qkd-ab", DegradationKind::FiberCut, SimTime{0}});
  CHECK(f.net.advance("qkd-ab", std::chrono::seconds(10)).empty());
}

TEST_CASE("inject_event: cut, noise and recovery") {
  Fixture f;
  CHECK(f.net.inject_event({"qkd-ab", DegradationKind::NoiseIncrease, SimTime{0}, 0.5}) == LinkStatus::Degraded);
  CHECK(f.net.profile("qkd-ab").effective_rate_bps() == doctest::Approx(1000.0));
  CHECK(f.net.inject_event({"qkd-ab", DegradationKind::FiberCut, SimTime{0}}) == LinkStatus::Down);
  CHECK(f.net.profile("qkd-ab").effective_rate_bps() == 0.0);
  CHECK(f.net.inject_event({"qkd-ab", DegradationKind::Recovery, SimTime{0}}) == LinkStatus::Up);
  CHECK(f.net.advance("qkd-ab", std::chrono::seconds(1)).size() == 7);
  auto reports = f.net.drain_reports();
  REQUIRE(reports.size() == 3);
  CHECK(reports[1].status == LinkStatus::Down);
  CHECK(f.net.drain_reports().empty());
  CHECK_ERROR(f.net.inject_event({"nope", DegradationKind::FiberCut, SimTime{0}}), ErrorCode::LinkUnknown);
}

TEST_CASE("seed_stream determinism and AlreadyStarted") {
  Fixture f1(2000.0, 99), f2(2000.0, 99), f3(2000.0, 100);
  auto s1 = f1.net.advance("qkd-ab", std::chrono::seconds(130));
  auto s2 = f2.net.advance("qkd-ab", std::chrono::seconds(130));
  auto s3 = f3.net.advance("qkd-ab", std::chrono::seconds(130));
  REQUIRE(s1.size() >= 1000);
  bool all_same = true, any_diff = false;
  for (std::size_t i = 0; i < 1000; ++i) {
    all_same = all_same && s1[i].bytes == s2[i].bytes && s1[i].key_id == s2[i].key_id;
    any_diff = any_diff || s1[i].bytes != s3[i].bytes;
  }
  CHECK(all_same);
  CHECK(any_diff);
  CHECK_ERROR(f1.net.seed_stream("qkd-ab", 5), ErrorCode::AlreadyStarted);
  // Bytes are a pure function of (seed, link, index).
  CHECK(f1.net.block_bytes("qkd-ab", 17) == s1[17].bytes);
}

TEST_CASE("property: rate fidelity over 60 s windows, never overshooting") {
  for (double rate : {2000.0, 1000.0, 1234.5, 333.3}) {
    Fixture f(rate);
    std::vector<std::uint64_t> cumulative{0};
    for (int s = 0; s < 600; ++s) {
      f.net.advance("qkd-ab", std::chrono::seconds(1));
      cumulative.push_back(f.net.emitted_bits("qkd-ab"));
    }
    for (std::size_t t = 60; t < cumulative.size(); ++t) {
      double ideal = rate * static_cast<double>(t);
      REQUIRE(static_cast<double>(cumulative[t]) <= ideal);
      // Quantization shortfall is below one block at every instant.
      REQUIRE(static_cast<double>(cumulative[t]) > ideal - 256);
      // The 1% bound follows once a window holds >= 100 blocks.
      if (rate * 60 >= 100 * 256) REQUIRE(static_cast<double>(cumulative[t]) >= 0.99 * ideal);
      // Sliding window: shortfall and carry are each under one block.
      double window = static_cast<double>(cumulative[t] - cumulative[t - 60]);
      REQUIRE(window >= rate * 60 - 256);
      REQUIRE(window <= rate * 60 + 256);
    }
  }
}

TEST_CASE("events inside an advance split integration at the event instant") {
  Fixture f;
  f.net.inject_event({"qkd-ab", DegradationKind::FiberCut, std::chrono::milliseconds(500)});
  f.net.inject_event({"qkd-ab", DegradationKind::Recovery, std::chrono::milliseconds(1500)});
  f.net.advance("qkd-ab", std::chrono::seconds(2));
  // 0.5 s up + 0.5 s up = 2000 bits -> 7 blocks, same as one stable second.
  CHECK(f.net.emitted_blocks("qkd-ab") == 7);
  auto reports = f.net.drain_reports();
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].at == std::chrono::milliseconds(500));
  CHECK(reports[1].at == std::chrono::milliseconds(1500));
}

TEST_CASE("profile validation") {
  KeyStore a("A"), b("B");
  QkdNetwork net;
  QkdLinkProfile p;
  p.link_id = "x";
  p.a = "A";
  p.b = "B";
  p.skr_bps = 0;
  CHECK_ERROR(net.add_link(p, a, b), ErrorCode::SchemaError);
  p.skr_bps = 10;
  p.block_size_bits = 250;
  CHECK_ERROR(net.add_link(p, a, b), ErrorCode::SchemaError);
}
