#include "qsvpn/harness/config.hpp"

#include <fstream>
#include <set>

#include "qsvpn/common/error.hpp"

#ifndef QSVPN_SOURCE_DIR
#define QSVPN_SOURCE_DIR "."
#endif

namespace qsvpn::harness {

std::string_view to_string(ScriptedKind k) noexcept {
  switch (k) {
    case ScriptedKind::FiberCut: return "FIBER_CUT";
    case ScriptedKind::Recovery: return "RECOVERY";
    case ScriptedKind::NoiseIncrease: return "NOISE_INCREASE";
    case ScriptedKind::NodeDown: return "NODE_DOWN";
    case ScriptedKind::NodeUp: return "NODE_UP";
    case ScriptedKind::ProbeSetup: return "PROBE_SETUP";
  }
  return "?";
}

namespace {

ScriptedKind scripted_kind_from_string(const std::string& s) {
  for (auto k : {ScriptedKind::FiberCut, ScriptedKind::Recovery, ScriptedKind::NoiseIncrease, ScriptedKind::NodeDown,
                 ScriptedKind::NodeUp, ScriptedKind::ProbeSetup})
    if (to_string(k) == s) return k;
  fail(ErrorCode::SchemaError, "unknown event kind " + s);
}

ike::RekeyFallback fallback_from_string(const std::string& s) {
  if (s == "ABORT") return ike::RekeyFallback::Abort;
  if (s == "ECDH_ONLY") return ike::RekeyFallback::EcdhOnly;
  fail(ErrorCode::SchemaError, "unknown rekey fallback " + s);
}

template <typename T>
void opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

const NodeConfig& TopologyConfig::node(const NodeId& id) const {
  for (const auto& n : nodes)
    if (n.descriptor.node_id == id) return n;
  fail(ErrorCode::UnknownNode, id.value);
}

NodeId TopologyConfig::hub() const {
  for (const auto& n : nodes)
    if (n.descriptor.role == sdn::NodeRole::Hub) return n.descriptor.node_id;
  fail(ErrorCode::SchemaError, "topology has no hub");
}

std::vector<NodeId> TopologyConfig::node_ids() const {
  std::vector<NodeId> out;
  for (const auto& n : nodes) out.push_back(n.descriptor.node_id);
  return out;
}

std::vector<NodeId> TopologyConfig::spokes() const {
  std::vector<NodeId> out;
  for (const auto& n : nodes)
    if (n.descriptor.role == sdn::NodeRole::Spoke) out.push_back(n.descriptor.node_id);
  return out;
}

double TopologyConfig::ecdh_ms(const NodeId& id) const {
  return node(id).ecdh_compute_ms.value_or(calibration.ecdh_compute_ms);
}

TopologyConfig parse_topology(const json& doc) {
  TopologyConfig c;
  try {
    c.schema_version = doc.at("schema_version").get<int>();
    if (c.schema_version != kConfigSchemaVersion)
      fail(ErrorCode::SchemaError, "unsupported schema_version " + std::to_string(c.schema_version));
    c.name = doc.at("name").get<std::string>();
    opt(doc, "seed", c.seed);
    opt(doc, "duration_s", c.duration_s);
    opt(doc, "warmup_s", c.warmup_s);

    for (const auto& n : doc.at("nodes")) {
      NodeConfig nc;
      nc.descriptor.node_id = n.at("id").get<std::string>();
      nc.descriptor.role = sdn::node_role_from_string(n.at("role").get<std::string>());
      nc.descriptor.domain = sdn::domain_from_string(n.value("domain", "QUANTUM_TRUST"));
      nc.descriptor.skip_address = "skip://" + nc.descriptor.node_id.value;
      nc.nbma = n.value("nbma", "");
      nc.site = n.value("site", "");
      if (n.contains("ecdh_compute_ms")) nc.ecdh_compute_ms = n["ecdh_compute_ms"].get<double>();
      opt(n, "rekey_fresh_ppk", nc.rekey_fresh_ppk);
      c.nodes.push_back(std::move(nc));
    }
    for (const auto& l : doc.value("qkd_links", json::array())) {
      qkd::QkdLinkProfile p;
      p.link_id = l.at("link_id").get<std::string>();
      p.a = l.at("a").get<std::string>();
      p.b = l.at("b").get<std::string>();
      p.technology = keystore::technology_from_string(l.at("technology").get<std::string>());
      p.skr_bps = l.value("skr_bps", p.technology == keystore::Technology::CvQkd ? qkd::kDefaultCvRateBps : qkd::kDefaultDvRateBps);
      opt(l, "block_size_bits", p.block_size_bits);
      c.qkd_links.push_back(p);
    }
    for (const auto& l : doc.at("transport_links")) {
      sim::TransportLinkConfig t;
      t.a = l.at("a").get<std::string>();
      t.b = l.at("b").get<std::string>();
      t.one_way_delay_ms = l.at("one_way_delay_ms").get<double>();
      opt(l, "jitter_ms", t.jitter_ms);
      opt(l, "loss_rate", t.loss_rate);
      c.transport_links.push_back(t);
    }
    if (doc.contains("policy")) {
      const auto& p = doc["policy"];
      if (p.contains("source_preference")) {
        c.policy.source_preference.clear();
        for (const auto& s : p["source_preference"]) c.policy.source_preference.push_back(sdn::source_kind_from_string(s.get<std::string>()));
      }
      opt(p, "buffer_threshold_bits", c.policy.buffer_threshold_bits);
      opt(p, "block_size_bits", c.policy.block_size_bits);
      opt(p, "require_ppk", c.policy.require_ppk);
      opt(p, "rekey_margin_s", c.policy.rekey_margin_s);
      opt(p, "sa_lifetime_s", c.policy.sa_lifetime_s);
      opt(p, "hysteresis_s", c.policy.hysteresis_s);
      opt(p, "max_relay_hops", c.policy.max_relay_hops);
    }
    if (doc.contains("calibration")) {
      const auto& k = doc["calibration"];
      opt(k, "ecdh_compute_ms", c.calibration.ecdh_compute_ms);
      opt(k, "kms_processing_ms", c.calibration.kms_processing_ms);
      opt(k, "skip_local_call_ms", c.calibration.skip_local_call_ms);
      opt(k, "relay_hop_ms", c.calibration.relay_hop_ms);
      opt(k, "kem_compute_ms", c.calibration.kem_compute_ms);
      opt(k, "sync_timeout_ms", c.calibration.sync_timeout_ms);
    }
    if (doc.contains("pqc")) {
      opt(doc["pqc"], "kem", c.pqc.kem);
      opt(doc["pqc"], "pool_min_blocks", c.pqc.pool_min_blocks);
    }
    if (doc.contains("ike")) {
      const auto& i = doc["ike"];
      if (i.contains("mode")) c.ike.mode = ike::ike_mode_from_string(i["mode"].get<std::string>());
      opt(i, "dh_group", c.ike.dh_group);
      opt(i, "timeout_ms", c.ike.timeout_ms);
      if (i.contains("rekey_fallback")) c.ike.rekey_fallback = fallback_from_string(i["rekey_fallback"].get<std::string>());
    }
    c.ike.require_ppk = c.policy.require_ppk;
    if (doc.contains("timers")) {
      opt(doc["timers"], "telemetry_s", c.timers.telemetry_s);
      opt(doc["timers"], "policy_tick_s", c.timers.policy_tick_s);
      opt(doc["timers"], "buffer_sample_s", c.timers.buffer_sample_s);
    }
    if (doc.contains("traffic")) {
      const auto& t = doc["traffic"];
      opt(t, "enabled", c.traffic.enabled);
      opt(t, "packet_interval_ms", c.traffic.packet_interval_ms);
      opt(t, "hub_flows_start_s", c.traffic.hub_flows_start_s);
      opt(t, "spoke_pairs_start_s", c.traffic.spoke_pairs_start_s);
      opt(t, "spoke_pair_stagger_s", c.traffic.spoke_pair_stagger_s);
    }
    for (const auto& e : doc.value("events", json::array())) {
      ScriptedEvent ev;
      ev.at_s = e.at("at_s").get<double>();
      ev.kind = scripted_kind_from_string(e.at("kind").get<std::string>());
      ev.link_id = e.value("link_id", "");
      ev.rate_factor = e.value("rate_factor", 1.0);
      ev.node = e.value("node", "");
      ev.initiator = e.value("initiator", "");
      ev.responder = e.value("responder", "");
      c.events.push_back(ev);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaError, e.what());
  }
  validate_topology(c);
  return c;
}

void validate_topology(const TopologyConfig& c) {
  if (c.nodes.empty()) fail(ErrorCode::SchemaError, "no nodes");
  std::set<NodeId> ids;
  int hubs = 0;
  for (const auto& n : c.nodes) {
    if (n.descriptor.node_id.value.empty()) fail(ErrorCode::SchemaError, "empty node id");
    if (!ids.insert(n.descriptor.node_id).second) fail(ErrorCode::SchemaError, "duplicate node " + n.descriptor.node_id.value);
    if (n.descriptor.role == sdn::NodeRole::Hub) ++hubs;
    if (n.ecdh_compute_ms && *n.ecdh_compute_ms < 0) fail(ErrorCode::SchemaError, "negative compute delay");
  }
  if (hubs != 1) fail(ErrorCode::SchemaError, "exactly one hub required, found " + std::to_string(hubs));
  std::set<std::string> link_ids;
  for (const auto& l : c.qkd_links) {
    if (!ids.count(l.a) || !ids.count(l.b)) fail(ErrorCode::SchemaError, "QKD link " + l.link_id + " has a dangling endpoint");
    if (l.a == l.b) fail(ErrorCode::SchemaError, "QKD link " + l.link_id + " loops");
    if (!link_ids.insert(l.link_id).second) fail(ErrorCode::SchemaError, "duplicate QKD link " + l.link_id);
    if (!keystore::is_qkd(l.technology)) fail(ErrorCode::SchemaError, "QKD link " + l.link_id + " has a non-QKD technology");
    if (l.skr_bps < 0 || l.block_size_bits == 0 || l.block_size_bits % 8) fail(ErrorCode::SchemaError, "bad QKD link rate/block size");
    for (const auto& n : c.nodes)
      if ((n.descriptor.node_id == l.a || n.descriptor.node_id == l.b) && n.descriptor.domain == sdn::Domain::PqcOnly)
        fail(ErrorCode::SchemaError, "QKD link " + l.link_id + " touches PQC-only node " + n.descriptor.node_id.value);
  }
  sim::EventLoop scratch;
  sim::Transport graph(scratch, 0);
  for (const auto& t : c.transport_links) {
    if (!ids.count(t.a) || !ids.count(t.b)) fail(ErrorCode::SchemaError, "transport link " + t.a.value + "-" + t.b.value + " has a dangling endpoint");
    graph.add_link(t);
  }
  if (ids.size() > 1 && (graph.nodes().size() != ids.size() || !graph.connected()))
    fail(ErrorCode::DisconnectedTopology, "transport graph does not connect all " + std::to_string(ids.size()) + " nodes");
  c.policy.validate();
  const auto& k = c.calibration;
  for (double v : {k.ecdh_compute_ms, k.kms_processing_ms, k.skip_local_call_ms, k.relay_hop_ms, k.kem_compute_ms, k.sync_timeout_ms})
    if (v < 0) fail(ErrorCode::SchemaError, "negative calibration value");
  if (c.timers.telemetry_s <= 0 || c.timers.policy_tick_s <= 0 || c.timers.buffer_sample_s <= 0)
    fail(ErrorCode::SchemaError, "timer periods must be positive");
  if (c.traffic.packet_interval_ms <= 0) fail(ErrorCode::SchemaError, "packet interval must be positive");
  if (c.ike.dh_group != "toy" && c.ike.dh_group != "p384") fail(ErrorCode::SchemaError, "unknown dh_group " + c.ike.dh_group);
  for (const auto& e : c.events) {
    if (e.at_s < 0) fail(ErrorCode::SchemaError, "event before start");
    switch (e.kind) {
      case ScriptedKind::FiberCut:
      case ScriptedKind::Recovery:
      case ScriptedKind::NoiseIncrease:
        if (!link_ids.count(e.link_id)) fail(ErrorCode::SchemaError, "event on unknown QKD link " + e.link_id);
        break;
      case ScriptedKind::NodeDown:
      case ScriptedKind::NodeUp:
        if (!ids.count(e.node)) fail(ErrorCode::SchemaError, "event on unknown node " + e.node.value);
        break;
      case ScriptedKind::ProbeSetup:
        if (!ids.count(e.initiator) || !ids.count(e.responder) || e.initiator == e.responder)
          fail(ErrorCode::SchemaError, "probe setup needs two distinct known nodes");
        break;
    }
  }
}

TopologyConfig load_topology(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaError, path.string() + ": " + e.what());
  }
  return parse_topology(doc);
}

json topology_to_json(const TopologyConfig& c) {
  json doc{{"schema_version", c.schema_version}, {"name", c.name}, {"seed", c.seed}, {"duration_s", c.duration_s}, {"warmup_s", c.warmup_s}};
  for (const auto& n : c.nodes) {
    json j{{"id", n.descriptor.node_id.value},
           {"role", sdn::to_string(n.descriptor.role)},
           {"domain", sdn::to_string(n.descriptor.domain)},
           {"nbma", n.nbma},
           {"rekey_fresh_ppk", n.rekey_fresh_ppk}};
    if (!n.site.empty()) j["site"] = n.site;
    if (n.ecdh_compute_ms) j["ecdh_compute_ms"] = *n.ecdh_compute_ms;
    doc["nodes"].push_back(j);
  }
  doc["qkd_links"] = json::array();
  for (const auto& l : c.qkd_links)
    doc["qkd_links"].push_back({{"link_id", l.link_id}, {"a", l.a.value}, {"b", l.b.value},
                                {"technology", keystore::to_string(l.technology)}, {"skr_bps", l.skr_bps},
                                {"block_size_bits", l.block_size_bits}});
  for (const auto& t : c.transport_links)
    doc["transport_links"].push_back({{"a", t.a.value}, {"b", t.b.value}, {"one_way_delay_ms", t.one_way_delay_ms},
                                      {"jitter_ms", t.jitter_ms}, {"loss_rate", t.loss_rate}});
  json pref = json::array();
  for (auto s : c.policy.source_preference) pref.push_back(sdn::to_string(s));
  doc["policy"] = {{"source_preference", pref}, {"buffer_threshold_bits", c.policy.buffer_threshold_bits},
                   {"block_size_bits", c.policy.block_size_bits}, {"require_ppk", c.policy.require_ppk},
                   {"rekey_margin_s", c.policy.rekey_margin_s}, {"sa_lifetime_s", c.policy.sa_lifetime_s},
                   {"hysteresis_s", c.policy.hysteresis_s}, {"max_relay_hops", c.policy.max_relay_hops}};
  const auto& k = c.calibration;
  doc["calibration"] = {{"ecdh_compute_ms", k.ecdh_compute_ms}, {"kms_processing_ms", k.kms_processing_ms},
                        {"skip_local_call_ms", k.skip_local_call_ms}, {"relay_hop_ms", k.relay_hop_ms},
                        {"kem_compute_ms", k.kem_compute_ms}, {"sync_timeout_ms", k.sync_timeout_ms}};
  doc["pqc"] = {{"kem", c.pqc.kem}, {"pool_min_blocks", c.pqc.pool_min_blocks}};
  doc["ike"] = {{"mode", ike::to_string(c.ike.mode)}, {"dh_group", c.ike.dh_group}, {"timeout_ms", c.ike.timeout_ms},
                {"rekey_fallback", c.ike.rekey_fallback == ike::RekeyFallback::Abort ? "ABORT" : "ECDH_ONLY"}};
  doc["timers"] = {{"telemetry_s", c.timers.telemetry_s}, {"policy_tick_s", c.timers.policy_tick_s},
                   {"buffer_sample_s", c.timers.buffer_sample_s}};
  doc["traffic"] = {{"enabled", c.traffic.enabled}, {"packet_interval_ms", c.traffic.packet_interval_ms},
                    {"hub_flows_start_s", c.traffic.hub_flows_start_s}, {"spoke_pairs_start_s", c.traffic.spoke_pairs_start_s},
                    {"spoke_pair_stagger_s", c.traffic.spoke_pair_stagger_s}};
  doc["events"] = json::array();
  for (const auto& e : c.events) {
    json j{{"at_s", e.at_s}, {"kind", to_string(e.kind)}};
    if (!e.link_id.empty()) j["link_id"] = e.link_id;
    if (e.kind == ScriptedKind::NoiseIncrease) j["rate_factor"] = e.rate_factor;
    if (!e.node.value.empty()) j["node"] = e.node.value;
    if (!e.initiator.value.empty()) j["initiator"] = e.initiator.value;
    if (!e.responder.value.empty()) j["responder"] = e.responder.value;
    doc["events"].push_back(j);
  }
  return doc;
}

std::filesystem::path resolve_scenario(const std::string& name_or_path) {
  namespace fs = std::filesystem;
  if (fs::exists(name_or_path)) return name_or_path;
  for (fs::path dir : {fs::path("scenarios"), fs::path(QSVPN_SOURCE_DIR) / "scenarios"}) {
    fs::path p = dir / (name_or_path + ".json");
    if (fs::exists(p)) return p;
  }
  fail(ErrorCode::IoError, "scenario not found: " + name_or_path);
}

}  // namespace qsvpn::harness
