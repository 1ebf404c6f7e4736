#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "qsvpn/harness/report.hpp"
#include "qsvpn/harness/world.hpp"
#include "unit/test_support.hpp"

using namespace qsvpn;
using namespace qsvpn::harness;

namespace {

const TopologyConfig& fieldtrial() {
  static const TopologyConfig c = load_topology(resolve_scenario("fieldtrial5"));
  return c;
}

json fieldtrial_json() { return topology_to_json(fieldtrial()); }

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("default scenario: five nodes, two QKD links, one hub, calibrated RTTs") {
  const auto& c = fieldtrial();
  CHECK(c.nodes.size() == 5);
  CHECK(c.qkd_links.size() == 2);
  CHECK(c.hub() == NodeId("W1"));
  CHECK(c.spokes().size() == 4);
  CHECK(c.qkd_links[0].technology != c.qkd_links[1].technology);
  sim::EventLoop loop;
  sim::Transport t(loop, 0);
  for (const auto& l : c.transport_links) t.add_link(l);
  CHECK(t.nominal_delay("W1", "E1") * 2 == from_ms(0.7));
  CHECK(t.nominal_delay("W1", "CAN") * 2 == from_ms(7.5));
  CHECK(t.nominal_delay("W1", "QRO") * 2 == from_ms(175));
  CHECK(c.ecdh_ms("CAN") == doctest::Approx(82.85));
  CHECK(c.ecdh_ms("E1") == doctest::Approx(9.65));

  auto again = parse_topology(topology_to_json(c));
  CHECK(topology_to_json(again) == topology_to_json(c));
}

TEST_CASE("invalid scenarios are rejected") {
  SUBCASE("dangling QKD endpoint") {
    auto j = fieldtrial_json();
    j["qkd_links"][0]["b"] = "NOWHERE";
    CHECK_ERROR(parse_topology(j), ErrorCode::SchemaError);
  }
  SUBCASE("dangling transport endpoint") {
    auto j = fieldtrial_json();
    j["transport_links"][0]["a"] = "NOWHERE";
    CHECK_ERROR(parse_topology(j), ErrorCode::SchemaError);
  }
  SUBCASE("wrong field type") {
    auto j = fieldtrial_json();
    j["seed"] = "many";
    CHECK_ERROR(parse_topology(j), ErrorCode::SchemaError);
  }
  SUBCASE("unsupported schema version") {
    auto j = fieldtrial_json();
    j["schema_version"] = 2;
    CHECK_ERROR(parse_topology(j), ErrorCode::SchemaError);
  }
  SUBCASE("two hubs") {
    auto j = fieldtrial_json();
    j["nodes"][1]["role"] = "HUB";
    CHECK_ERROR(parse_topology(j), ErrorCode::SchemaError);
  }
  SUBCASE("disconnected transport graph") {
    auto j = fieldtrial_json();
    auto& links = j["transport_links"];
    links.erase(links.size() - 1);  // W1-QRO
    CHECK_ERROR(parse_topology(j), ErrorCode::DisconnectedTopology);
  }
  SUBCASE("missing file") {
    CHECK_ERROR(load_topology("/nonexistent/scenario.json"), ErrorCode::IoError);
  }
}

TEST_CASE("zero delays and zero compute give zero setup time") {
  auto j = fieldtrial_json();
  for (auto& l : j["transport_links"]) {
    l["one_way_delay_ms"] = 0;
    l["jitter_ms"] = 0;
  }
  for (auto& n : j["nodes"]) n.erase("ecdh_compute_ms");
  for (const char* k : {"ecdh_compute_ms", "kms_processing_ms", "skip_local_call_ms", "relay_hop_ms", "kem_compute_ms"})
    j["calibration"][k] = 0;
  auto c = parse_topology(j);
  for (auto mode : {MeasureMode::EcdhOnly, MeasureMode::Ppk}) {
    auto r = measure_sa_setup(c, "W1", "QRO", mode, 5);
    CHECK(r.failed == 0);
    for (const auto& rec : r.records) CHECK(rec.latency.total() == SimDuration{0});
  }
}

TEST_CASE("measurement: jitter-free variance is zero, decomposition is exact, PPK costs more") {
  auto j = fieldtrial_json();
  for (auto& l : j["transport_links"]) l["jitter_ms"] = 0;
  auto quiet = parse_topology(j);
  for (const NodeId& spoke : quiet.spokes()) {
    auto e = measure_sa_setup(quiet, "W1", spoke, MeasureMode::EcdhOnly, 10);
    auto p = measure_sa_setup(quiet, "W1", spoke, MeasureMode::Ppk, 10);
    CHECK(e.failed == 0);
    CHECK(p.failed == 0);
    CHECK(e.total.variance_ms2 == doctest::Approx(0.0));
    CHECK(p.total.variance_ms2 == doctest::Approx(0.0));
    CHECK(e.get_key.mean_ms == 0.0);
    CHECK(p.total.mean_ms > e.total.mean_ms);
  }
  auto jittery = measure_sa_setup(fieldtrial(), "W1", "QRO", MeasureMode::Ppk, 30);
  CHECK(jittery.total.variance_ms2 > 0.0);
  for (const auto& rec : jittery.records) {
    CHECK(rec.latency.t_sa_init + rec.latency.t_get_key + rec.latency.t_ike_auth == rec.latency.total());
    CHECK(rec.finished_at - rec.started_at == rec.latency.total());
  }
}

TEST_CASE("forced source modes pick the requested source") {
  auto q = measure_sa_setup(fieldtrial(), "W1", "E1", MeasureMode::PpkQkd, 3);
  auto p = measure_sa_setup(fieldtrial(), "W1", "E1", MeasureMode::PpkPqc, 3);
  for (const auto& r : q.records) CHECK(r.source == "QKD");
  for (const auto& r : p.records) CHECK(r.source == "PQC");
  auto none = measure_sa_setup(fieldtrial(), "W1", "CAN", MeasureMode::PpkQkd, 2);
  CHECK(none.failed == 2);
}

TEST_CASE("PPK setups agree at both ends across sources") {
  WorldOptions o;
  o.traffic = false;
  o.overlay_boot = false;
  o.scripted_events = false;
  World w(fieldtrial(), o);
  w.start();
  w.run_until(from_s(10));
  std::vector<ike::SetupRecord> recs;
  for (auto [a, b] : std::vector<std::pair<NodeId, NodeId>>{{"W1", "E1"}, {"E1", "E2"}, {"CAN", "QRO"}})
    w.probe(a, b, [&](const ike::SetupRecord& r) { recs.push_back(r); });
  w.run_until(from_s(15));
  REQUIRE(recs.size() == 3);
  std::set<std::string> paths;
  for (const auto& r : recs) {
    REQUIRE(r.ok());
    paths.insert(r.path);
    const auto* i = w.daemon(r.initiator).sa(r.sa_id);
    const auto* s = w.daemon(r.responder).sa(r.sa_id);
    REQUIRE(i);
    REQUIRE(s);
    CHECK(i->ppk_id == r.ppk_id);
    CHECK(s->ppk_id == r.ppk_id);
    CHECK(i->key_schedule.ppk == s->key_schedule.ppk);
    CHECK(i->key_schedule.sk_d == s->key_schedule.sk_d);
    CHECK(i->key_schedule.sk_d != i->key_schedule.sk_d_prime);
    CHECK(i->qr);
  }
  CHECK(paths == std::set<std::string>{"DIRECT_QKD", "RELAY_VIA", "PQC_DIRECT"});
}

TEST_CASE("rekeys inside the window with a fresh PPK and no packet loss") {
  auto r = run_scenario(fieldtrial(), from_s(1400));
  std::map<std::string, const ike::SetupRecord*> by_id;
  for (const auto& s : r.setups) by_id[s.sa_id] = &s;
  std::size_t rekeys = 0;
  for (const auto& s : r.setups) {
    if (s.kind != ike::SetupKind::Rekey) continue;
    ++rekeys;
    REQUIRE(s.ok());
    const auto* old = by_id.at(s.replaces);
    auto age = s.started_at - old->finished_at;
    CHECK(age >= from_s(540));
    CHECK(age < from_s(600));
    CHECK(s.ppk_id != old->ppk_id);
  }
  CHECK(rekeys >= 8);
  CHECK(r.overlay.sent == r.overlay.delivered);
  CHECK(r.overlay.decrypt_failures == 0);
  CHECK(r.overlay.no_sa_drops == 0);
}

TEST_CASE("reports: one row per SA, stable bytes, I/O errors surface") {
  auto r = run_scenario(fieldtrial(), from_s(400));
  auto tables = render_report(r);
  REQUIRE(tables.count("sa_setups.csv"));
  CHECK(line_count(tables["sa_setups.csv"]) == r.setups.size() + 2);
  CHECK(tables["sa_setups.csv"].rfind("# qsvpn sa_setups schema=1\n", 0) == 0);
  CHECK(render_report(r) == tables);

  auto dir = std::filesystem::temp_directory_path() / "qsvpn_report_test";
  std::filesystem::remove_all(dir);
  auto files = emit_report(r, dir);
  CHECK(files.size() == tables.size());
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str() == tables.at(f.filename().string()));
  }
  std::filesystem::remove_all(dir);
  CHECK_ERROR(emit_report(r, "/proc/qsvpn/cannot"), ErrorCode::IoError);

  auto again = run_scenario(fieldtrial(), from_s(400));
  CHECK(render_report(again) == tables);
}

TEST_CASE("fixed-seed scenario matches the reviewed golden checksums") {
  std::ifstream in(std::filesystem::path(QSVPN_TEST_DATA_DIR) / "golden" / "fieldtrial5.sha512");
  REQUIRE(in);
  std::stringstream golden;
  golden << in.rdbuf();
  auto r = run_scenario(fieldtrial());
  CHECK(report_checksums(render_report(r)) == golden.str());
}
