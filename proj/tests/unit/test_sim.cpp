#include <doctest.h>

#include "qsvpn/sim/transport.hpp"
#include "unit/test_support.hpp"

using namespace qsvpn;
using namespace qsvpn::sim;

TEST_CASE("event loop runs events in time order, ties by insertion") {
  EventLoop loop;
  std::vector<int> order;
  loop.schedule_at(from_ms(5), [&] { order.push_back(3); });
  loop.schedule_at(from_ms(1), [&] { order.push_back(1); });
  loop.schedule_at(from_ms(1), [&] { order.push_back(2); });
  auto dropped = loop.schedule_at(from_ms(2), [&] { order.push_back(99); });
  loop.cancel(dropped);
  CHECK(loop.pending() == 3);
  loop.run();
  CHECK(order == std::vector<int>{1, 2, 3});
  CHECK(loop.now() == from_ms(5));
  CHECK(loop.executed() == 3);
}

TEST_CASE("scheduling in the past is a scenario panic") {
  EventLoop loop;
  loop.run_until(from_ms(10));
  CHECK(loop.now() == from_ms(10));
  CHECK_ERROR(loop.schedule_at(from_ms(9), [] {}), ErrorCode::ScenarioPanic);
  SimTime seen{-1};
  loop.schedule_in(SimDuration{0}, [&] { seen = loop.now(); });
  loop.run();
  CHECK(seen == from_ms(10));
}

namespace {

struct Pair {
  EventLoop loop;
  Transport net;
  std::vector<Envelope> got;

  explicit Pair(TransportLinkConfig l, std::uint64_t seed = 7) : net(loop, seed) {
    net.add_link(l);
    net.on(l.b, "t", [this](const Envelope& e) { got.push_back(e); });
  }
};

}  // namespace

TEST_CASE("delivery is exactly one-way delay when jitter is zero") {
  Pair p({"W1", "QRO", 87.5, 0.0, 0.0});
  auto at = p.net.send("W1", "QRO", "t", {{"x", 1}});
  REQUIRE(at);
  CHECK(*at == from_ms(87.5));
  p.loop.run();
  REQUIRE(p.got.size() == 1);
  CHECK(p.got[0].delivered_at == p.got[0].sent_at + from_ms(87.5));
  CHECK(p.got[0].body["x"] == 1);
  CHECK(p.net.nominal_delay("W1", "QRO") * 2 == from_ms(175));
}

TEST_CASE("loss rate one never delivers") {
  Pair p({"A", "B", 1.0, 0.0, 1.0});
  for (int i = 0; i < 100; ++i) CHECK_FALSE(p.net.send("A", "B", "t", i));
  p.loop.run();
  CHECK(p.got.empty());
  CHECK(p.net.stats().lost == 100);
}

TEST_CASE("jittered deliveries stay within bounds and causal") {
  Pair p({"A", "B", 3.75, 0.25, 0.0});
  for (int i = 0; i < 500; ++i) {
    p.loop.schedule_at(from_ms(i), [&p, i] { p.net.send("A", "B", "t", i); });
  }
  p.loop.run();
  REQUIRE(p.got.size() == 500);
  for (const auto& e : p.got) {
    CHECK(e.delivered_at >= e.sent_at + from_ms(3.5));
    CHECK(e.delivered_at <= e.sent_at + from_ms(4.0));
  }
}

TEST_CASE("same seed gives the same delivery schedule") {
  auto schedule = [](std::uint64_t seed) {
    Pair p({"A", "B", 2.0, 0.5, 0.1}, seed);
    for (int i = 0; i < 200; ++i) p.net.send("A", "B", "t", i);
    p.loop.run();
    std::vector<std::pair<std::int64_t, int>> s;
    for (const auto& e : p.got) s.emplace_back(e.delivered_at.count(), e.body.get<int>());
    return s;
  };
  CHECK(schedule(3) == schedule(3));
  CHECK(schedule(3) != schedule(4));
}

TEST_CASE("routes prefer the lowest delay and fail when cut") {
  EventLoop loop;
  Transport net(loop, 1);
  net.add_link({"A", "H", 1.0});
  net.add_link({"H", "B", 1.0});
  net.add_link({"A", "B", 5.0});
  CHECK(net.route("A", "B") == std::vector<NodeId>{"A", "H", "B"});
  net.set_node_up("H", false);
  CHECK(net.route("A", "B") == std::vector<NodeId>{"A", "B"});
  net.set_link_up("A", "B", false);
  CHECK_ERROR(net.send("A", "B", "t", 1), ErrorCode::LinkDown);
  CHECK(net.connected());
}

TEST_CASE("destination going down in flight counts as lost") {
  Pair p({"A", "B", 10.0});
  p.net.send("A", "B", "t", 1);
  p.loop.schedule_at(from_ms(5), [&] { p.net.set_node_up("B", false); });
  p.loop.run();
  CHECK(p.got.empty());
  CHECK(p.net.stats().lost == 1);
}
