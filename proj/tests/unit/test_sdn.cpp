#include <doctest.h>

#include <map>
#include <set>

#include "qsvpn/sdn/controller.hpp"
#include "unit/test_support.hpp"

using namespace qsvpn;
using namespace qsvpn::sdn;
using keystore::KeyBlock;
using keystore::KeyStore;
using qkd::LinkStatus;

namespace {

// Star of the reference field trial: hub W1, metro spokes E1/E2 on QKD
// links, two PQC-only cloud nodes.
struct Star {
  std::map<NodeId, std::unique_ptr<KeyStore>> stores;
  std::map<NodeId, std::unique_ptr<Agent>> agents;
  Controller ctl;
  // Every hop key ever ingested, as the test saw it before any relay.
  std::map<KeyId, Bytes> hop_keys;
  std::uint64_t counter = 1;

  explicit Star(Policy p = {}) : ctl(p) {
    add("W1", NodeRole::Hub, Domain::QuantumTrust);
    add("E1", NodeRole::Spoke, Domain::QuantumTrust);
    add("E2", NodeRole::Spoke, Domain::QuantumTrust);
    add("CAN", NodeRole::Spoke, Domain::PqcOnly);
    add("QRO", NodeRole::Spoke, Domain::PqcOnly);
    ctl.register_link({"qkd-w1-e1", "W1", "E1", keystore::Technology::CvQkd});
    ctl.register_link({"qkd-w1-e2", "W1", "E2", keystore::Technology::DvQkd});
  }
  void add(const std::string& n, NodeRole r, Domain d) {
    stores[n] = std::make_unique<KeyStore>(n);
    ctl.register_node({n, r, d, {}, "skip://" + n, "agent-" + n});
    agents[n] = std::make_unique<Agent>(ctl.node(n).value(), *stores[n], 7);
    ctl.attach_agent(*agents[n]);
  }
  void fill(const std::string& link, const NodeId& a, const NodeId& b, int blocks, SimTime at = SimTime{0}) {
    for (int i = 0; i < blocks; ++i, ++counter) {
      Bytes m(32);
      for (int k = 0; k < 32; ++k) m[k] = static_cast<std::uint8_t>((counter * 131 + k * 7) & 0xff);
      KeyId id(source_tag(link), counter);
      hop_keys[id] = m;
      SimTime t = at + SimTime{static_cast<std::int64_t>(counter)};
      stores[a]->ingest(KeyBlock{id, m, link, b, keystore::Technology::DvQkd, t, t + from_s(86400)});
      stores[b]->ingest(KeyBlock{id, m, link, a, keystore::Technology::DvQkd, t, t + from_s(86400)});
    }
  }
  void report_all(SimTime at) {
    for (const auto& lv : ctl.links()) {
      auto bits = stores[lv.link.a]->buffer_level(lv.link.link_id).available_bits;
      ctl.report_link_state(lv.link.link_id, lv.status, bits, at);
    }
  }
  void stock(int blocks = 8) {
    fill("qkd-w1-e1", "W1", "E1", blocks);
    fill("qkd-w1-e2", "W1", "E2", blocks);
    report_all(SimTime{1});
  }
};

// Independent validator: walks a plan against the view.
bool plan_is_sound(const PathPlan& plan, const std::vector<LinkView>& links, std::uint64_t threshold) {
  if (plan.nodes.size() < 2 || plan.nodes.front() != plan.from || plan.nodes.back() != plan.to) return false;
  if (plan.kind == PathKind::PqcDirect) return plan.links.empty() && plan.nodes.size() == 2;
  if (plan.links.size() + 1 != plan.nodes.size()) return false;
  if (plan.kind == PathKind::DirectQkd && plan.links.size() != 1) return false;
  if (plan.kind == PathKind::RelayVia && plan.links.size() < 2) return false;
  for (std::size_t i = 0; i < plan.links.size(); ++i) {
    const LinkView* v = nullptr;
    for (const auto& l : links)
      if (l.link.link_id == plan.links[i]) v = &l;
    if (!v) return false;
    bool joins = (v->link.a == plan.nodes[i] && v->link.b == plan.nodes[i + 1]) ||
                 (v->link.b == plan.nodes[i] && v->link.a == plan.nodes[i + 1]);
    if (!joins || v->status == LinkStatus::Down || v->buffer_bits < threshold) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("registration and descriptor invariants") {
  Star s;
  CHECK(s.ctl.nodes().size() == 5);
  CHECK(s.ctl.hub() == NodeId("W1"));
  CHECK_ERROR(s.ctl.register_node({"E1", NodeRole::Spoke, Domain::QuantumTrust}), ErrorCode::DuplicateNode);
  CHECK_ERROR(s.ctl.register_node({"X", NodeRole::Spoke, Domain::PqcOnly, {"qkd-x"}}), ErrorCode::InvalidDescriptor);
  CHECK_ERROR(s.ctl.register_link({"qkd-bad", "W1", "CAN", keystore::Technology::DvQkd}), ErrorCode::InvalidDescriptor);
  CHECK_ERROR(s.ctl.register_link({"qkd-bad", "W1", "NOPE", keystore::Technology::DvQkd}), ErrorCode::UnknownNode);
  CHECK(s.ctl.node("E1")->qkd_links == std::vector<std::string>{"qkd-w1-e1"});
  CHECK(s.ctl.peers_of("W1").size() == 4);
}

TEST_CASE("link state reports: apply, ignore stale, reject unknown") {
  Star s;
  CHECK(s.ctl.report_link_state("qkd-w1-e1", LinkStatus::Down, 0, from_s(10)));
  CHECK(s.ctl.link("qkd-w1-e1").status == LinkStatus::Down);
  CHECK_FALSE(s.ctl.report_link_state("qkd-w1-e1", LinkStatus::Up, 4096, from_s(5)));
  CHECK(s.ctl.link("qkd-w1-e1").status == LinkStatus::Down);
  CHECK_ERROR(s.ctl.report_link_state("qkd-nope", LinkStatus::Up, 0, from_s(11)), ErrorCode::UnknownLink);
}

TEST_CASE("path computation over the star") {
  Star s;
  s.stock();
  auto p1 = s.ctl.compute_key_path("E1", "W1");
  CHECK(p1.kind == PathKind::DirectQkd);
  CHECK(p1.links == std::vector<std::string>{"qkd-w1-e1"});
  auto p2 = s.ctl.compute_key_path("E1", "E2");
  CHECK(p2.kind == PathKind::RelayVia);
  CHECK(p2.relays() == std::vector<NodeId>{"W1"});
  CHECK(p2.relay_origin() == "relay:E1>W1>E2");
  auto p3 = s.ctl.compute_key_path("W1", "QRO");
  CHECK(p3.kind == PathKind::PqcDirect);
  auto p4 = s.ctl.compute_key_path("E1", "CAN");
  CHECK(p4.kind == PathKind::PqcDirect);

  // Every emitted plan passes the independent walk.
  for (auto& a : {"W1", "E1", "E2", "CAN", "QRO"})
    for (auto& b : {"W1", "E1", "E2", "CAN", "QRO"})
      if (std::string(a) != b) CHECK(plan_is_sound(s.ctl.compute_key_path(a, b), s.ctl.links(), 256));

  // PQC disallowed and QKD unusable
  Policy qkd_only;
  qkd_only.source_preference = {SourceKind::Qkd};
  CHECK_ERROR(s.ctl.compute_key_path("W1", "QRO", qkd_only), ErrorCode::NoPathAvailable);
  s.ctl.set_pqc_available(NodePair("W1", "QRO"), false, from_s(2));
  CHECK_ERROR(s.ctl.compute_key_path("W1", "QRO"), ErrorCode::NoPathAvailable);
  // PQC preferred first
  Policy pqc_first;
  pqc_first.source_preference = {SourceKind::Pqc, SourceKind::Qkd};
  CHECK(s.ctl.compute_key_path("E1", "W1", pqc_first).kind == PathKind::PqcDirect);
  // hop limit of one forbids relay
  Policy direct_only;
  direct_only.max_relay_hops = 1;
  CHECK(s.ctl.compute_key_path("E1", "E2", direct_only).kind == PathKind::PqcDirect);
}

TEST_CASE("relay: identical key at both ends, exact hop accounting, secrecy") {
  Star s;
  s.stock(8);
  auto plan = s.ctl.compute_key_path("E1", "E2");
  auto before_e1 = s.stores["E1"]->buffer_level("qkd-w1-e1").available_bits;
  auto before_w1a = s.stores["W1"]->buffer_level("qkd-w1-e1").available_bits;
  auto before_w1b = s.stores["W1"]->buffer_level("qkd-w1-e2").available_bits;
  auto before_e2 = s.stores["E2"]->buffer_level("qkd-w1-e2").available_bits;

  auto out = s.ctl.relay_key(plan, 256, from_s(3));
  REQUIRE(out.wire.size() == 2);
  auto k1 = s.stores["E1"]->fetch_by_id(out.key_id);
  auto k2 = s.stores["E2"]->fetch_by_id(out.key_id);
  CHECK(k1.ppk == k2.ppk);
  CHECK(k1.ppk.size() == 32);
  CHECK(k1.technology == keystore::Technology::Relayed);
  CHECK(k1.origin == "relay:E1>W1>E2");

  CHECK(s.stores["E1"]->buffer_level("qkd-w1-e1").available_bits == before_e1 - 256);
  CHECK(s.stores["W1"]->buffer_level("qkd-w1-e1").available_bits == before_w1a - 256);
  CHECK(s.stores["W1"]->buffer_level("qkd-w1-e2").available_bits == before_w1b - 256);
  CHECK(s.stores["E2"]->buffer_level("qkd-w1-e2").available_bits == before_e2 - 256);

  // K never appears on the wire; brute force over every recorded message and
  // every known hop key reconstructs it only with a hop key.
  for (const auto& m : out.wire) {
    CHECK_FALSE(contains_subsequence(m.payload, k1.ppk));
    CHECK_FALSE(contains_subsequence(m.tag, k1.ppk));
    CHECK(m.payload != k1.ppk);
  }
  CHECK(xor_bytes(out.wire[0].payload, out.wire[1].payload) != k1.ppk);
  int reconstructions = 0;
  for (const auto& m : out.wire)
    for (const auto& [id, hk] : s.hop_keys)
      if (xor_bytes(m.payload, hk) == k1.ppk) {
        ++reconstructions;
        CHECK(std::find(m.hop_key_ids.begin(), m.hop_key_ids.end(), id) != m.hop_key_ids.end());
        CHECK(relay_tag(hk, m.payload, m.hop) == m.tag);
      }
  CHECK(reconstructions == 2);
}

TEST_CASE("relay: multi-block keys, size and availability errors") {
  Star s;
  s.stock(3);
  auto plan = s.ctl.compute_key_path("E1", "E2");
  auto out = s.ctl.relay_key(plan, 512, from_s(1));
  CHECK(out.wire[0].hop_key_ids.size() == 2);
  CHECK(s.stores["E1"]->fetch_by_id(out.key_id).ppk == s.stores["E2"]->fetch_by_id(out.key_id).ppk);
  CHECK_ERROR(s.ctl.relay_key(plan, 200, from_s(1)), ErrorCode::BadSize);
  CHECK_ERROR(s.ctl.relay_key(plan, 512, from_s(1)), ErrorCode::InsufficientKeyMaterial);
  try {
    s.ctl.relay_key(plan, 512, from_s(1));
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("qkd-w1-e1") != std::string::npos);
  }
  s.agents["W1"]->set_reachable(false);
  CHECK_ERROR(s.ctl.relay_key(plan, 256, from_s(1)), ErrorCode::NodeUnreachable);
  s.agents["W1"]->set_reachable(true);
  auto last = s.ctl.relay_key(plan, 256, from_s(2));
  CHECK(last.key_id != out.key_id);
  CHECK(s.stores["W1"]->available_blocks("E1", std::string("qkd-w1-e1")) == 0);
}

TEST_CASE("source selection: reasons and hysteresis") {
  Policy p;
  p.hysteresis_s = 30;
  Star s(p);
  s.stock(4);
  NodePair e1w1("E1", "W1");
  CHECK(s.ctl.select_source(e1w1, from_s(1)).reason == SelectReason::QkdOk);
  auto cloud = s.ctl.select_source(NodePair("W1", "QRO"), from_s(1));
  CHECK(cloud.source == SourceKind::Pqc);
  CHECK(cloud.reason == SelectReason::NoQkd);

  s.ctl.report_link_state("qkd-w1-e1", LinkStatus::Up, 0, from_s(10));
  auto low = s.ctl.select_source(e1w1, from_s(10));
  CHECK(low.source == SourceKind::Pqc);
  CHECK(low.reason == SelectReason::BufferLow);

  s.ctl.report_link_state("qkd-w1-e1", LinkStatus::Up, 4096, from_s(20));
  auto hold = s.ctl.select_source(e1w1, from_s(20));
  CHECK(hold.source == SourceKind::Pqc);
  CHECK(hold.reason == SelectReason::HysteresisHold);
  CHECK(s.ctl.select_source(e1w1, from_s(39)).reason == SelectReason::HysteresisHold);
  CHECK(s.ctl.select_source(e1w1, from_s(40)).source == SourceKind::Qkd);

  s.ctl.report_link_state("qkd-w1-e1", LinkStatus::Down, 4096, from_s(41));
  auto down = s.ctl.select_source(e1w1, from_s(41));
  CHECK(down.source == SourceKind::Pqc);
  CHECK(down.reason == SelectReason::LinkDown);
}

TEST_CASE("policy_tick: actions per affected pair, idempotent") {
  Star s;
  s.stock(8);
  std::vector<NodePair> pairs;
  for (auto& a : {"W1", "E1", "E2", "CAN", "QRO"})
    for (auto& b : {"W1", "E1", "E2", "CAN", "QRO"})
      if (std::string(a) < b) pairs.emplace_back(a, b);
  for (const auto& pr : pairs) s.ctl.select_source(pr, from_s(2));
  CHECK(s.ctl.policy_tick(from_s(10)).empty());
  CHECK(s.ctl.policy_tick(from_s(10)).empty());

  s.ctl.report_link_state("qkd-w1-e1", LinkStatus::Down, 2048, from_s(11));
  // Brute force: pairs whose only QKD route used the cut link.
  std::set<NodePair> expected;
  for (const auto& pr : pairs) {
    bool touches_e1 = pr.contains("E1");
    bool qkd_capable = !pr.contains("CAN") && !pr.contains("QRO");
    if (touches_e1 && qkd_capable) expected.insert(pr);
  }
  auto actions = s.ctl.policy_tick(from_s(20));
  std::set<NodePair> got;
  for (const auto& a : actions) {
    got.insert(a.pair);
    CHECK(a.to == SourceKind::Pqc);
    CHECK(a.reason == SelectReason::LinkDown);
  }
  CHECK(got == expected);
  CHECK(actions.size() == expected.size());
  CHECK(s.ctl.policy_tick(from_s(20)).empty());
  // failover liveness: next selection returns PQC
  CHECK(s.ctl.select_source(NodePair("E1", "E2"), from_s(21)).source == SourceKind::Pqc);

  // recovery flips back after the hysteresis window only
  s.ctl.report_link_state("qkd-w1-e1", LinkStatus::Up, 2048, from_s(30));
  CHECK(s.ctl.policy_tick(from_s(30)).empty());
  CHECK(s.ctl.policy_tick(from_s(50)).size() == expected.size());
}

TEST_CASE("agent message channel") {
  Star s;
  auto ack = s.ctl.handle_agent_message(
      {{"type", "register"}, {"node", {{"node_id", "E3"}, {"role", "SPOKE"}, {"domain", "QUANTUM_TRUST"}}}});
  CHECK(ack["type"] == "ack");
  auto dup = s.ctl.handle_agent_message(
      {{"type", "register"}, {"node", {{"node_id", "E3"}, {"role", "SPOKE"}, {"domain", "QUANTUM_TRUST"}}}});
  CHECK(dup["error"] == "DuplicateNode");
  s.fill("qkd-w1-e1", "W1", "E1", 2);
  auto rep = s.ctl.handle_agent_message(s.agents["E1"]->link_report("qkd-w1-e1", LinkStatus::Up, from_s(3)));
  CHECK(rep["applied"] == true);
  CHECK(s.ctl.link("qkd-w1-e1").buffer_bits == 512);
  auto path = s.ctl.handle_agent_message({{"type", "path_request"}, {"from", "E1"}, {"to", "W1"}});
  CHECK(path["plan"]["kind"] == "DIRECT_QKD");
  CHECK(s.ctl.handle_agent_message({{"type", "bogus"}})["error"] == "SchemaError");
}

TEST_CASE("event log replay reproduces plans and switch actions") {
  Star s;
  s.stock(8);
  std::vector<NodePair> pairs{{"E1", "W1"}, {"E1", "E2"}, {"W1", "QRO"}, {"E2", "CAN"}};
  for (int t = 0; t < 40; ++t) {
    SimTime now = from_s(10 + t * 10);
    if (t == 5) s.ctl.report_link_state("qkd-w1-e1", LinkStatus::Down, 0, now);
    if (t == 9) s.ctl.report_link_state("qkd-w1-e1", LinkStatus::Up, 2048, now);
    if (t == 20) s.ctl.report_link_state("qkd-w1-e2", LinkStatus::Up, 0, now);
    for (const auto& p : pairs) {
      s.ctl.select_source(p, now);
      try {
        s.ctl.compute_key_path(p.first, p.second);
      } catch (const Error&) {
      }
    }
    s.ctl.policy_tick(now);
  }
  auto replayed = Controller::replay(s.ctl.event_log());
  CHECK(replayed == s.ctl.output_log());
  CHECK(Controller::replay(s.ctl.event_log()) == replayed);
}
