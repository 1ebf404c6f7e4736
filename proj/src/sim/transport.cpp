#include "qsvpn/sim/transport.hpp"

#include <limits>
#include <queue>

#include "qsvpn/common/error.hpp"

namespace qsvpn::sim {

Transport::Transport(EventLoop& loop, std::uint64_t seed) : loop_(loop), rng_(DeterministicRng(seed).fork("transport")) {}

void Transport::add_link(const TransportLinkConfig& link) {
  if (link.a == link.b) fail(ErrorCode::SchemaError, "transport link loops on " + link.a.value);
  if (link.one_way_delay_ms < 0 || link.jitter_ms < 0 || link.loss_rate < 0 || link.loss_rate > 1)
    fail(ErrorCode::SchemaError, "transport link parameters out of range");
  links_[NodePair(link.a, link.b)] = Link{link, true};
}

const Transport::Link* Transport::find(const NodeId& a, const NodeId& b) const {
  auto it = links_.find(NodePair(a, b));
  return it == links_.end() ? nullptr : &it->second;
}

bool Transport::has_link(const NodeId& a, const NodeId& b) const { return find(a, b) != nullptr; }

const TransportLinkConfig& Transport::link(const NodeId& a, const NodeId& b) const {
  auto* l = find(a, b);
  if (!l) fail(ErrorCode::LinkDown, "no transport link " + a.value + "-" + b.value);
  return l->config;
}

void Transport::set_link_up(const NodeId& a, const NodeId& b, bool up) {
  auto it = links_.find(NodePair(a, b));
  if (it == links_.end()) fail(ErrorCode::LinkDown, "no transport link " + a.value + "-" + b.value);
  it->second.up = up;
}

void Transport::set_node_up(const NodeId& node, bool up) {
  if (up)
    down_.erase(node);
  else
    down_.insert(node);
}

bool Transport::node_up(const NodeId& node) const { return down_.count(node) == 0; }

void Transport::on(const NodeId& node, const std::string& channel, Handler handler) {
  handlers_[{node, channel}] = std::move(handler);
}

std::set<NodeId> Transport::nodes() const {
  std::set<NodeId> out;
  for (const auto& [pair, _] : links_) {
    out.insert(pair.first);
    out.insert(pair.second);
  }
  return out;
}

bool Transport::connected() const {
  auto all = nodes();
  if (all.empty()) return true;
  std::set<NodeId> seen{*all.begin()};
  std::vector<NodeId> stack{*all.begin()};
  while (!stack.empty()) {
    NodeId n = stack.back();
    stack.pop_back();
    for (const auto& [pair, _] : links_) {
      if (!pair.contains(n)) continue;
      const NodeId& m = pair.other(n);
      if (seen.insert(m).second) stack.push_back(m);
    }
  }
  return seen.size() == all.size();
}

// Dijkstra by nominal delay over live links and nodes; ties resolve by node order.
std::vector<const Transport::Link*> Transport::route_links(const NodeId& from, const NodeId& to) const {
  if (from == to) return {};
  using Item = std::pair<std::int64_t, NodeId>;
  std::map<NodeId, std::int64_t> dist{{from, 0}};
  std::map<NodeId, std::pair<NodeId, const Link*>> prev;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  pq.push({0, from});
  while (!pq.empty()) {
    auto [d, n] = pq.top();
    pq.pop();
    if (d > dist[n]) continue;
    if (n == to) break;
    for (const auto& [pair, link] : links_) {
      if (!link.up || !pair.contains(n)) continue;
      const NodeId& m = pair.other(n);
      if (!node_up(m) && m != to) continue;
      std::int64_t nd = d + from_ms(link.config.one_way_delay_ms).count();
      auto it = dist.find(m);
      if (it == dist.end() || nd < it->second) {
        dist[m] = nd;
        prev[m] = {n, &link};
        pq.push({nd, m});
      }
    }
  }
  if (!prev.count(to)) fail(ErrorCode::LinkDown, "no route " + from.value + " -> " + to.value);
  std::vector<const Link*> path;
  for (NodeId n = to; n != from; n = prev[n].first) path.insert(path.begin(), prev[n].second);
  return path;
}

std::vector<NodeId> Transport::route(const NodeId& from, const NodeId& to) const {
  std::vector<NodeId> nodes{from};
  for (const Link* l : route_links(from, to)) {
    const NodeId& cur = nodes.back();
    nodes.push_back(NodePair(l->config.a, l->config.b).other(cur));
  }
  return nodes;
}

SimDuration Transport::nominal_delay(const NodeId& from, const NodeId& to) const {
  SimDuration d{0};
  for (const Link* l : route_links(from, to)) d += from_ms(l->config.one_way_delay_ms);
  return d;
}

SimDuration Transport::max_delay(const NodeId& from, const NodeId& to) const {
  SimDuration d{0};
  for (const Link* l : route_links(from, to)) d += from_ms(l->config.one_way_delay_ms + l->config.jitter_ms);
  return d;
}

std::optional<SimTime> Transport::send(const NodeId& from, const NodeId& to, const std::string& channel, json body) {
  auto path = route_links(from, to);
  ++stats_.sent;
  SimDuration delay{0};
  bool lost = !node_up(from) || !node_up(to);
  for (const Link* l : path) {
    double ms = l->config.one_way_delay_ms;
    if (l->config.jitter_ms > 0) ms += rng_.uniform(-l->config.jitter_ms, l->config.jitter_ms);
    delay += from_ms(std::max(0.0, ms));
    if (l->config.loss_rate > 0 && rng_.bernoulli(l->config.loss_rate)) lost = true;
  }
  if (lost) {
    ++stats_.lost;
    return std::nullopt;
  }
  Envelope env{next_id_++, from, to, channel, std::move(body), loop_.now(), loop_.now() + delay, path.size()};
  SimTime at = env.delivered_at;
  loop_.schedule_at(at, [this, env = std::move(env)] {
    if (env.delivered_at < env.sent_at) fail(ErrorCode::ScenarioPanic, "message delivered before it was sent");
    if (!node_up(env.to)) {
      ++stats_.lost;
      return;
    }
    auto it = handlers_.find({env.to, env.channel});
    if (it == handlers_.end()) {
      ++stats_.unhandled;
      return;
    }
    ++stats_.delivered;
    it->second(env);
  });
  return at;
}

}  // namespace qsvpn::sim
