#include "qsvpn/sdn/types.hpp"

#include "qsvpn/common/error.hpp"

namespace qsvpn::sdn {

std::string_view to_string(NodeRole r) noexcept { return r == NodeRole::Hub ? "HUB" : "SPOKE"; }

std::string_view to_string(Domain d) noexcept { return d == Domain::QuantumTrust ? "QUANTUM_TRUST" : "PQC_ONLY"; }

std::string_view to_string(PathKind k) noexcept {
  switch (k) {
    case PathKind::DirectQkd: return "DIRECT_QKD";
    case PathKind::RelayVia: return "RELAY_VIA";
    case PathKind::PqcDirect: return "PQC_DIRECT";
  }
  return "?";
}

std::string_view to_string(SourceKind s) noexcept { return s == SourceKind::Qkd ? "QKD" : "PQC"; }

std::string_view to_string(SelectReason r) noexcept {
  switch (r) {
    case SelectReason::QkdOk: return "QKD_OK";
    case SelectReason::BufferLow: return "BUFFER_LOW";
    case SelectReason::LinkDown: return "LINK_DOWN";
    case SelectReason::NoQkd: return "NO_QKD";
    case SelectReason::HysteresisHold: return "HYSTERESIS_HOLD";
    case SelectReason::PolicyPreference: return "POLICY_PREFERENCE";
  }
  return "?";
}

NodeRole node_role_from_string(std::string_view s) {
  if (s == "HUB") return NodeRole::Hub;
  if (s == "SPOKE") return NodeRole::Spoke;
  fail(ErrorCode::SchemaError, "unknown node role " + std::string(s));
}

Domain domain_from_string(std::string_view s) {
  if (s == "QUANTUM_TRUST") return Domain::QuantumTrust;
  if (s == "PQC_ONLY") return Domain::PqcOnly;
  fail(ErrorCode::SchemaError, "unknown domain " + std::string(s));
}

SourceKind source_kind_from_string(std::string_view s) {
  if (s == "QKD") return SourceKind::Qkd;
  if (s == "PQC") return SourceKind::Pqc;
  fail(ErrorCode::SchemaError, "unknown source kind " + std::string(s));
}

std::vector<NodeId> PathPlan::relays() const {
  if (nodes.size() < 3) return {};
  return {nodes.begin() + 1, nodes.end() - 1};
}

std::string PathPlan::relay_origin() const {
  std::string out = "relay:";
  for (std::size_t i = 0; i < nodes.size(); ++i) out += (i ? ">" : "") + nodes[i].value;
  return out;
}

json PathPlan::to_json() const {
  json n = json::array();
  for (const auto& x : nodes) n.push_back(x.value);
  return json{{"from", from.value}, {"to", to.value}, {"kind", std::string(to_string(kind))}, {"nodes", n}, {"links", links}};
}

void Policy::validate() const {
  if (source_preference.empty()) fail(ErrorCode::SchemaError, "empty source preference");
  if (block_size_bits == 0 || block_size_bits % 8 != 0) fail(ErrorCode::SchemaError, "block size must be whole octets");
  if (buffer_threshold_bits < block_size_bits) fail(ErrorCode::SchemaError, "threshold below one block");
  if (!(rekey_margin_s >= 0 && rekey_margin_s < sa_lifetime_s)) fail(ErrorCode::SchemaError, "rekey margin must be below SA lifetime");
  if (hysteresis_s < 0) fail(ErrorCode::SchemaError, "negative hysteresis");
  if (max_relay_hops < 1) fail(ErrorCode::SchemaError, "max_relay_hops must be >= 1");
}

bool Policy::allows(SourceKind s) const {
  return std::find(source_preference.begin(), source_preference.end(), s) != source_preference.end();
}

json SwitchAction::to_json() const {
  return json{{"pair", pair.label()},
              {"from", std::string(to_string(from))},
              {"to", std::string(to_string(to))},
              {"reason", std::string(to_string(reason))},
              {"at_us", at.count()}};
}

}  // namespace qsvpn::sdn
