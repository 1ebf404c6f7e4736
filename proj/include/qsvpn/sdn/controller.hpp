#pragma once

#include <map>
#include <mutex>
#include <set>
#include <vector>

#include "qsvpn/sdn/agent.hpp"
#include "qsvpn/sdn/types.hpp"

namespace qsvpn::sdn {

/// Logically centralized controller. All calls are serialized (actor
/// contract); every state-changing input is appended to a replayable event
/// log and every decision to an output log.
class Controller {
 public:
  explicit Controller(Policy policy = {});

  const Policy& policy() const noexcept { return policy_; }

  void register_node(const NodeDescriptor& descriptor);
  void register_link(const LinkDescriptor& link);
  void attach_agent(Agent& agent);

  // Returns false when the report is older than the current view.
  bool report_link_state(const std::string& link_id, qkd::LinkStatus status, std::uint64_t buffer_bits, SimTime at);
  void set_pqc_available(const NodePair& pair, bool available, SimTime at);

  PathPlan compute_key_path(const NodeId& from, const NodeId& to) const;
  PathPlan compute_key_path(const NodeId& from, const NodeId& to, const Policy& policy) const;

  // Decision for the pair, applying hysteresis on PQC -> QKD switch-back.
  // Marks the pair active for policy ticks.
  SourceDecision select_source(const NodePair& pair, SimTime now);

  // Re-evaluates all active pairs; returns the switch actions produced
  // since the previous tick and clears them.
  std::vector<SwitchAction> policy_tick(SimTime now);

  // Hop-by-hop one-time-pad relay along a RELAY_VIA plan; both ends ingest
  // the same key tagged RELAYED under origin plan.relay_origin().
  RelayOutcome relay_key(const PathPlan& plan, std::size_t out_bits, SimTime now);

  // Carries ppk_id reservations between key stores over the agent channel.
  keystore::PeerSync& peer_sync() noexcept { return sync_; }

  std::vector<NodeDescriptor> nodes() const;
  std::optional<NodeDescriptor> node(const NodeId& id) const;
  std::vector<LinkView> links() const;
  LinkView link(const std::string& link_id) const;
  std::optional<NodeId> hub() const;
  std::vector<NodeId> peers_of(const NodeId& node) const;  // every other registered node
  bool pqc_available(const NodePair& pair) const;
  std::optional<SourceKind> current_source(const NodePair& pair) const;

  // Agent <-> controller messages ({"type": "register"|"report"|"path_request", ...}).
  json handle_agent_message(const json& message);

  const std::vector<json>& event_log() const noexcept { return events_; }
  const std::vector<json>& output_log() const noexcept { return outputs_; }
  // Feeds a recorded event log into a fresh controller; returns its outputs.
  static std::vector<json> replay(const std::vector<json>& events, Policy policy = {});

  std::size_t sync_messages() const;

 private:
  class AgentSync : public keystore::PeerSync {
   public:
    explicit AgentSync(Controller& c) : owner_(c) {}
    void claim(const NodeId& peer, const KeyId& id, SimTime synced_at) override;
    void discard(const NodeId& peer, const KeyId& id) override;

   private:
    Controller& owner_;
  };

  struct PairState {
    SourceKind current = SourceKind::Qkd;
    std::optional<SimTime> last_switch;
  };

  void check_node(const NodeId& id) const;
  // Full: healthy links with buffer >= threshold. Status: healthy links.
  // Topology: any registered link.
  enum class PathCheck { Full, Status, Topology };
  std::optional<PathPlan> qkd_path(const NodeId& from, const NodeId& to, const Policy& policy,
                                   PathCheck check = PathCheck::Full) const;
  SourceDecision evaluate(const NodePair& pair, SimTime now) const;
  SourceDecision apply(const NodePair& pair, SimTime now);
  Agent& agent_for(const NodeId& id);
  void log_event(json e) const;
  void log_output(json o) const;

  Policy policy_;
  mutable std::recursive_mutex mu_;
  std::map<NodeId, NodeDescriptor> nodes_;
  std::map<std::string, LinkView> links_;
  std::map<NodeId, Agent*> agents_;
  std::map<NodePair, bool> pqc_up_;
  std::map<NodePair, PairState> pairs_;
  std::vector<SwitchAction> pending_;
  std::map<std::string, std::uint64_t> relay_counters_;
  mutable std::vector<json> events_;
  mutable std::vector<json> outputs_;
  std::size_t sync_messages_ = 0;
  AgentSync sync_{*this};
};

}  // namespace qsvpn::sdn
