#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qsvpn/ike/daemon.hpp"
#include "qsvpn/qkd/qkd_link.hpp"
#include "qsvpn/sdn/types.hpp"
#include "qsvpn/sim/transport.hpp"

namespace qsvpn::harness {

using json = nlohmann::json;

inline constexpr int kConfigSchemaVersion = 1;

struct NodeConfig {
  sdn::NodeDescriptor descriptor;
  std::string nbma;
  std::string site;
  std::optional<double> ecdh_compute_ms;  // per-node override of the calibration
  bool rekey_fresh_ppk = true;
};

struct Calibration {
  double ecdh_compute_ms = 9.65;
  double kms_processing_ms = 250.0;
  double skip_local_call_ms = 20.0;
  double relay_hop_ms = 2.0;
  double kem_compute_ms = 1.0;
  double sync_timeout_ms = 2000.0;
};

struct PqcConfig {
  std::string kem = "ML-KEM-1024";
  std::size_t pool_min_blocks = 8;
};

struct IkeSettings {
  ike::IkeMode mode = ike::IkeMode::Ppk;
  std::string dh_group = "toy";
  double timeout_ms = 5000.0;
  bool require_ppk = true;
  ike::RekeyFallback rekey_fallback = ike::RekeyFallback::Abort;
};

struct Timers {
  double telemetry_s = 1.0;
  double policy_tick_s = 10.0;
  double buffer_sample_s = 10.0;
};

struct TrafficConfig {
  bool enabled = true;
  double packet_interval_ms = 1000.0;
  double hub_flows_start_s = 20.0;
  double spoke_pairs_start_s = 60.0;
  double spoke_pair_stagger_s = 30.0;
};

enum class ScriptedKind { FiberCut, Recovery, NoiseIncrease, NodeDown, NodeUp, ProbeSetup };
std::string_view to_string(ScriptedKind k) noexcept;

struct ScriptedEvent {
  double at_s = 0.0;
  ScriptedKind kind = ScriptedKind::FiberCut;
  std::string link_id;  // link events
  double rate_factor = 1.0;
  NodeId node;          // node events
  NodeId initiator;     // probe setups
  NodeId responder;
};

struct TopologyConfig {
  int schema_version = kConfigSchemaVersion;
  std::string name;
  std::uint64_t seed = 1;
  double duration_s = 7200.0;
  double warmup_s = 10.0;
  std::vector<NodeConfig> nodes;
  std::vector<qkd::QkdLinkProfile> qkd_links;
  std::vector<sim::TransportLinkConfig> transport_links;
  sdn::Policy policy;
  Calibration calibration;
  PqcConfig pqc;
  IkeSettings ike;
  Timers timers;
  TrafficConfig traffic;
  std::vector<ScriptedEvent> events;

  const NodeConfig& node(const NodeId& id) const;
  NodeId hub() const;
  std::vector<NodeId> node_ids() const;
  std::vector<NodeId> spokes() const;
  double ecdh_ms(const NodeId& id) const;
};

// Parses and validates. SchemaError on malformed or dangling input,
// DisconnectedTopology when the transport graph is split.
TopologyConfig parse_topology(const json& doc);
TopologyConfig load_topology(const std::filesystem::path& path);
void validate_topology(const TopologyConfig& config);
json topology_to_json(const TopologyConfig& config);

// Locates a scenario by name ("fieldtrial5") or path; searches ./scenarios
// and the source tree's scenarios directory.
std::filesystem::path resolve_scenario(const std::string& name_or_path);

}  // namespace qsvpn::harness
