#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "qsvpn/ike/daemon.hpp"

namespace qsvpn::ike {

struct NhrpEntry {
  NodeId spoke;
  std::string nbma;
  SimTime registered_at{0};
};

struct NhrpResult {
  std::optional<std::string> nbma;
  std::optional<ErrorCode> error;
  SimDuration latency{0};
};

// Overlay hop count change for an ordered spoke pair.
struct HopEvent {
  SimTime at{0};
  NodeId src;
  NodeId dst;
  int from_hops = 0;
  int to_hops = 0;
};

struct DeliveryRecord {
  std::uint64_t packet_id = 0;
  NodeId src;
  NodeId dst;
  int hops = 0;  // overlay hops: 1 direct, 2 via the hub
  SimTime sent_at{0};
  std::string sa_id;  // SA of the first hop
};

struct OverlayStats {
  std::uint64_t sent = 0;
  std::uint64_t delivered = 0;
  std::uint64_t via_hub = 0;
  std::uint64_t direct = 0;
  std::uint64_t decrypt_failures = 0;
  std::uint64_t replayed = 0;
  std::uint64_t no_sa_drops = 0;
  std::uint64_t transport_lost = 0;
  std::uint64_t payload_mismatches = 0;
  std::uint64_t in_flight() const {
    return sent - delivered - decrypt_failures - replayed - no_sa_drops - payload_mismatches - transport_lost;
  }
};

struct OverlayConfig {
  IkeMode mode = IkeMode::Ppk;
  double nhrp_timeout_ms = 2000.0;
};

/// DMVPN-style overlay: the hub keeps the NHRP database; the first
/// spoke-to-spoke packet rides the hub and triggers resolution plus a direct
/// SA, after which the pair talks directly.
class DmvpnOverlay {
 public:
  using NhrpCallback = std::function<void(const NhrpResult&)>;

  DmvpnOverlay(sim::Transport& transport, NodeId hub, std::map<NodeId, IkeDaemon*> daemons, OverlayConfig config = {});

  const NodeId& hub() const noexcept { return hub_; }
  bool is_spoke(const NodeId& n) const { return n != hub_ && daemons_.count(n); }

  void nhrp_register(const NodeId& spoke, const std::string& nbma, NhrpCallback cb = {});
  void nhrp_resolve(const NodeId& requester, const NodeId& dest, NhrpCallback cb);
  const std::map<NodeId, NhrpEntry>& nhrp_table() const noexcept { return table_; }

  // Throws NoRoute when no SA or physical path can carry the first hop.
  DeliveryRecord forward_packet(const NodeId& src, const NodeId& dst, Bytes payload);

  void on_hop_change(std::function<void(const HopEvent&)> cb) { hop_observers_.push_back(std::move(cb)); }
  void on_loss(std::function<void(const DeliveryRecord&, ErrorCode)> cb) { loss_observers_.push_back(std::move(cb)); }

  const OverlayStats& stats() const noexcept { return stats_; }
  const std::vector<HopEvent>& hop_events() const noexcept { return hop_events_; }
  bool tunnel_pending(const NodeId& a, const NodeId& b) const { return pending_.count(NodePair(a, b)) != 0; }

 private:
  struct InFlight {
    DeliveryRecord record;
    Bytes payload;
  };
  struct NhrpPending {
    NhrpCallback cb;
    SimTime sent_at;
    std::uint64_t timer = 0;
  };

  void on_nhrp(const NodeId& at, const sim::Envelope& env);
  void on_data(const NodeId& at, const sim::Envelope& env);
  void nhrp_request(const NodeId& from, sim::json msg, NhrpCallback cb, ErrorCode on_timeout);
  void nhrp_complete(std::uint64_t req, NhrpResult result);
  void ship(const NodeId& from, const NodeId& to, std::uint64_t pid, const EspPacket& packet);
  void lose(std::uint64_t pid, ErrorCode code);
  void ensure_tunnel(const NodeId& src, const NodeId& dst);
  void note_hops(const NodeId& src, const NodeId& dst, int hops);

  sim::Transport& transport_;
  sim::EventLoop& loop_;
  NodeId hub_;
  std::map<NodeId, IkeDaemon*> daemons_;
  OverlayConfig config_;
  std::map<NodeId, NhrpEntry> table_;
  std::uint64_t next_req_ = 1;
  std::map<std::uint64_t, NhrpPending> nhrp_pending_;
  std::uint64_t next_packet_ = 1;
  std::map<std::uint64_t, InFlight> in_flight_;
  std::set<NodePair> pending_;
  std::map<std::pair<NodeId, NodeId>, int> last_hops_;
  std::vector<HopEvent> hop_events_;
  std::vector<std::function<void(const HopEvent&)>> hop_observers_;
  std::vector<std::function<void(const DeliveryRecord&, ErrorCode)>> loss_observers_;
  OverlayStats stats_;
};

}  // namespace qsvpn::ike
