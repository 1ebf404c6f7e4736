#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "qsvpn/common/bytes.hpp"
#include "qsvpn/common/rng.hpp"
#include "qsvpn/sim/event_loop.hpp"

namespace qsvpn::sim {

using json = nlohmann::json;

struct TransportLinkConfig {
  NodeId a;
  NodeId b;
  double one_way_delay_ms = 0.0;
  double jitter_ms = 0.0;  // uniform +-jitter per traversal
  double loss_rate = 0.0;
};

struct Envelope {
  std::uint64_t id = 0;
  NodeId from;
  NodeId to;
  std::string channel;
  json body;
  SimTime sent_at{0};
  SimTime delivered_at{0};
  std::size_t links = 0;  // physical links traversed
};

struct TransportStats {
  std::uint64_t sent = 0;
  std::uint64_t delivered = 0;
  std::uint64_t lost = 0;        // loss draw or endpoint down at delivery
  std::uint64_t unhandled = 0;   // no handler registered for the channel
};

/// Message transport over the physical graph. Messages follow the
/// shortest-delay route over links and nodes that are up; each traversed
/// link adds its delay, a jitter draw and a loss draw.
class Transport {
 public:
  using Handler = std::function<void(const Envelope&)>;

  Transport(EventLoop& loop, std::uint64_t seed);

  void add_link(const TransportLinkConfig& link);
  void set_link_up(const NodeId& a, const NodeId& b, bool up);
  void set_node_up(const NodeId& node, bool up);
  bool node_up(const NodeId& node) const;
  bool has_link(const NodeId& a, const NodeId& b) const;
  const TransportLinkConfig& link(const NodeId& a, const NodeId& b) const;

  void on(const NodeId& node, const std::string& channel, Handler handler);

  // Returns the delivery instant, or nullopt when the message is lost or an
  // endpoint is down. Throws LinkDown when no route exists.
  std::optional<SimTime> send(const NodeId& from, const NodeId& to, const std::string& channel, json body);

  std::vector<NodeId> route(const NodeId& from, const NodeId& to) const;
  SimDuration nominal_delay(const NodeId& from, const NodeId& to) const;
  SimDuration max_delay(const NodeId& from, const NodeId& to) const;  // delay plus jitter bound

  std::set<NodeId> nodes() const;
  bool connected() const;  // over all links, ignoring up/down state
  const TransportStats& stats() const noexcept { return stats_; }
  EventLoop& loop() noexcept { return loop_; }

 private:
  struct Link {
    TransportLinkConfig config;
    bool up = true;
  };
  const Link* find(const NodeId& a, const NodeId& b) const;
  std::vector<const Link*> route_links(const NodeId& from, const NodeId& to) const;

  EventLoop& loop_;
  DeterministicRng rng_;
  std::map<NodePair, Link> links_;
  std::set<NodeId> down_;
  std::map<std::pair<NodeId, std::string>, Handler> handlers_;
  std::uint64_t next_id_ = 1;
  TransportStats stats_;
};

}  // namespace qsvpn::sim
