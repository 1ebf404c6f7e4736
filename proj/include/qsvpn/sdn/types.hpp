#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qsvpn/common/bytes.hpp"
#include "qsvpn/common/sim_time.hpp"
#include "qsvpn/keystore/keystore.hpp"
#include "qsvpn/qkd/qkd_link.hpp"

namespace qsvpn::sdn {

using json = nlohmann::json;

enum class NodeRole { Hub, Spoke };
enum class Domain { QuantumTrust, PqcOnly };
enum class PathKind { DirectQkd, RelayVia, PqcDirect };
enum class SourceKind { Qkd, Pqc };
enum class SelectReason { QkdOk, BufferLow, LinkDown, NoQkd, HysteresisHold, PolicyPreference };

std::string_view to_string(NodeRole r) noexcept;
std::string_view to_string(Domain d) noexcept;
std::string_view to_string(PathKind k) noexcept;
std::string_view to_string(SourceKind s) noexcept;
std::string_view to_string(SelectReason r) noexcept;
NodeRole node_role_from_string(std::string_view s);
Domain domain_from_string(std::string_view s);
SourceKind source_kind_from_string(std::string_view s);

struct NodeDescriptor {
  NodeId node_id;
  NodeRole role = NodeRole::Spoke;
  Domain domain = Domain::QuantumTrust;
  std::vector<std::string> qkd_links;
  std::string skip_address;
  std::string agent_session;
};

struct LinkDescriptor {
  std::string link_id;
  NodeId a;
  NodeId b;
  keystore::Technology technology = keystore::Technology::DvQkd;
};

struct LinkView {
  LinkDescriptor link;
  qkd::LinkStatus status = qkd::LinkStatus::Up;
  std::uint64_t buffer_bits = 0;
  SimTime updated_at{-1};
};

struct PathPlan {
  NodeId from;  // requesting end
  NodeId to;
  PathKind kind = PathKind::PqcDirect;
  std::vector<NodeId> nodes;       // full path including both ends
  std::vector<std::string> links;  // one QKD link per hop (empty for PQC)

  NodePair pair() const { return NodePair(from, to); }
  std::vector<NodeId> relays() const;  // intermediate trusted nodes
  std::string relay_origin() const;    // "relay:A>H>B"
  json to_json() const;
};

struct Policy {
  std::vector<SourceKind> source_preference{SourceKind::Qkd, SourceKind::Pqc};
  std::uint64_t buffer_threshold_bits = 256;
  std::uint64_t block_size_bits = 256;
  bool require_ppk = true;
  double rekey_margin_s = 60.0;
  double sa_lifetime_s = 600.0;
  double hysteresis_s = 30.0;
  std::size_t max_relay_hops = 2;

  // Throws SchemaError on violated invariants.
  void validate() const;
  bool allows(SourceKind s) const;
};

struct SourceDecision {
  NodePair pair;
  SourceKind source = SourceKind::Pqc;
  SelectReason reason = SelectReason::NoQkd;
  SimTime at{0};
};

struct SwitchAction {
  NodePair pair;
  SourceKind from = SourceKind::Qkd;
  SourceKind to = SourceKind::Pqc;
  SelectReason reason = SelectReason::LinkDown;
  SimTime at{0};

  bool operator==(const SwitchAction&) const = default;
  json to_json() const;
};

// One hop of a relayed key as seen on the wire between trusted nodes.
struct RelayWireMessage {
  std::size_t hop = 0;
  NodeId from;
  NodeId to;
  std::string link_id;
  std::vector<KeyId> hop_key_ids;
  Bytes payload;  // end-to-end key xor hop key
  Bytes tag;      // truncated PRF under the second half of the hop key
};

struct RelayOutcome {
  KeyId key_id;
  std::string origin;
  std::size_t bits = 0;
  std::vector<RelayWireMessage> wire;
};

}  // namespace qsvpn::sdn
