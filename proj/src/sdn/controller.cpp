#include "qsvpn/sdn/controller.hpp"

#include <algorithm>
#include <deque>

#include "qsvpn/common/error.hpp"

namespace qsvpn::sdn {

namespace {

bool usable(const LinkView& v) { return v.status != qkd::LinkStatus::Down; }

json node_to_json(const NodeDescriptor& d) {
  return json{{"node_id", d.node_id.value},
              {"role", std::string(to_string(d.role))},
              {"domain", std::string(to_string(d.domain))},
              {"qkd_links", d.qkd_links},
              {"skip_address", d.skip_address},
              {"agent_session", d.agent_session}};
}

NodeDescriptor node_from_json(const json& j) {
  try {
    NodeDescriptor d;
    d.node_id = j.at("node_id").get<std::string>();
    d.role = node_role_from_string(j.at("role").get<std::string>());
    d.domain = domain_from_string(j.at("domain").get<std::string>());
    d.qkd_links = j.value("qkd_links", std::vector<std::string>{});
    d.skip_address = j.value("skip_address", std::string{});
    d.agent_session = j.value("agent_session", std::string{});
    return d;
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaError, std::string("node descriptor: ") + e.what());
  }
}

json decision_to_json(const SourceDecision& d) {
  return json{{"pair", d.pair.label()},
              {"source", std::string(to_string(d.source))},
              {"reason", std::string(to_string(d.reason))},
              {"at_us", d.at.count()}};
}

}  // namespace

Controller::Controller(Policy policy) : policy_(std::move(policy)) { policy_.validate(); }

void Controller::log_event(json e) const { events_.push_back(std::move(e)); }
void Controller::log_output(json o) const { outputs_.push_back(std::move(o)); }

void Controller::register_node(const NodeDescriptor& d) {
  std::lock_guard lock(mu_);
  if (d.node_id.value.empty()) fail(ErrorCode::InvalidDescriptor, "empty node id");
  if (nodes_.count(d.node_id)) fail(ErrorCode::DuplicateNode, d.node_id.value);
  if (d.domain == Domain::PqcOnly && !d.qkd_links.empty())
    fail(ErrorCode::InvalidDescriptor, d.node_id.value + " is PQC_ONLY but lists QKD links");
  if (d.role == NodeRole::Hub && hub()) fail(ErrorCode::InvalidDescriptor, "second hub " + d.node_id.value);
  nodes_.emplace(d.node_id, d);
  log_event(json{{"op", "register_node"}, {"node", node_to_json(d)}});
}

void Controller::register_link(const LinkDescriptor& link) {
  std::lock_guard lock(mu_);
  check_node(link.a);
  check_node(link.b);
  if (links_.count(link.link_id)) fail(ErrorCode::InvalidDescriptor, "duplicate link " + link.link_id);
  for (const NodeId* n : {&link.a, &link.b})
    if (nodes_.at(*n).domain == Domain::PqcOnly)
      fail(ErrorCode::InvalidDescriptor, n->value + " is PQC_ONLY and cannot terminate " + link.link_id);
  links_.emplace(link.link_id, LinkView{link, qkd::LinkStatus::Up, 0, SimTime{-1}});
  for (const NodeId* n : {&link.a, &link.b}) {
    auto& l = nodes_.at(*n).qkd_links;
    if (std::find(l.begin(), l.end(), link.link_id) == l.end()) l.push_back(link.link_id);
  }
  log_event(json{{"op", "register_link"},
                 {"link", link.link_id},
                 {"a", link.a.value},
                 {"b", link.b.value},
                 {"technology", std::string(keystore::to_string(link.technology))}});
}

void Controller::attach_agent(Agent& agent) {
  std::lock_guard lock(mu_);
  check_node(agent.node());
  agents_[agent.node()] = &agent;
}

bool Controller::report_link_state(const std::string& link_id, qkd::LinkStatus status, std::uint64_t buffer_bits,
                                   SimTime at) {
  std::lock_guard lock(mu_);
  auto it = links_.find(link_id);
  if (it == links_.end()) fail(ErrorCode::UnknownLink, link_id);
  if (at < it->second.updated_at) return false;
  log_event(json{{"op", "report"},
                 {"link", link_id},
                 {"status", std::string(qkd::to_string(status))},
                 {"buffer_bits", buffer_bits},
                 {"at_us", at.count()}});
  it->second.status = status;
  it->second.buffer_bits = buffer_bits;
  it->second.updated_at = at;
  return true;
}

void Controller::set_pqc_available(const NodePair& pair, bool available, SimTime at) {
  std::lock_guard lock(mu_);
  check_node(pair.first);
  check_node(pair.second);
  pqc_up_[pair] = available;
  log_event(json{{"op", "pqc"}, {"a", pair.first.value}, {"b", pair.second.value}, {"up", available}, {"at_us", at.count()}});
}

bool Controller::pqc_available(const NodePair& pair) const {
  std::lock_guard lock(mu_);
  auto it = pqc_up_.find(pair);
  return it == pqc_up_.end() || it->second;
}

void Controller::check_node(const NodeId& id) const {
  if (!nodes_.count(id)) fail(ErrorCode::UnknownNode, id.value);
}

std::optional<PathPlan> Controller::qkd_path(const NodeId& from, const NodeId& to, const Policy& policy,
                                             PathCheck check) const {
  auto ok = [&](const LinkView& v) {
    if (check == PathCheck::Topology) return true;
    if (!usable(v)) return false;
    return check == PathCheck::Status || v.buffer_bits >= policy.buffer_threshold_bits;
  };
  // Direct link first; links_ is ordered by id, so ties are deterministic.
  for (const auto& [id, v] : links_) {
    if (ok(v) && NodePair(v.link.a, v.link.b) == NodePair(from, to))
      return PathPlan{from, to, PathKind::DirectQkd, {from, to}, {id}};
  }
  // Breadth-first over healthy links through trusted nodes.
  std::map<NodeId, std::pair<NodeId, std::string>> parent;
  std::map<NodeId, std::size_t> depth{{from, 0}};
  std::deque<NodeId> queue{from};
  while (!queue.empty()) {
    NodeId cur = queue.front();
    queue.pop_front();
    if (cur == to) break;
    if (depth[cur] >= policy.max_relay_hops) continue;
    if (cur != from && nodes_.at(cur).domain != Domain::QuantumTrust) continue;
    for (const auto& [id, v] : links_) {
      if (!ok(v)) continue;
      NodeId next;
      if (v.link.a == cur) next = v.link.b;
      else if (v.link.b == cur) next = v.link.a;
      else continue;
      if (depth.count(next)) continue;
      depth[next] = depth[cur] + 1;
      parent[next] = {cur, id};
      queue.push_back(next);
    }
  }
  if (!depth.count(to)) return std::nullopt;
  PathPlan plan{from, to, PathKind::RelayVia, {}, {}};
  for (NodeId n = to; n != from; n = parent.at(n).first) {
    plan.nodes.push_back(n);
    plan.links.push_back(parent.at(n).second);
  }
  plan.nodes.push_back(from);
  std::reverse(plan.nodes.begin(), plan.nodes.end());
  std::reverse(plan.links.begin(), plan.links.end());
  return plan;
}

PathPlan Controller::compute_key_path(const NodeId& from, const NodeId& to) const { return compute_key_path(from, to, policy_); }

PathPlan Controller::compute_key_path(const NodeId& from, const NodeId& to, const Policy& policy) const {
  std::lock_guard lock(mu_);
  check_node(from);
  check_node(to);
  if (from == to) fail(ErrorCode::NoPathAvailable, "path to self");
  log_event(json{{"op", "path"}, {"from", from.value}, {"to", to.value}});
  for (SourceKind s : policy.source_preference) {
    if (s == SourceKind::Qkd) {
      if (auto plan = qkd_path(from, to, policy)) {
        log_output(json{{"op", "path"}, {"plan", plan->to_json()}});
        return *plan;
      }
    } else if (pqc_available(NodePair(from, to))) {
      PathPlan plan{from, to, PathKind::PqcDirect, {from, to}, {}};
      log_output(json{{"op", "path"}, {"plan", plan.to_json()}});
      return plan;
    }
  }
  log_output(json{{"op", "path"}, {"error", "NoPathAvailable"}});
  fail(ErrorCode::NoPathAvailable, from.value + " -> " + to.value);
}

SourceDecision Controller::evaluate(const NodePair& pair, SimTime now) const {
  SourceDecision d{pair, SourceKind::Pqc, SelectReason::NoQkd, now};
  // Why QKD is or is not usable for this pair.
  SelectReason qkd_reason = SelectReason::QkdOk;
  const bool qkd_ok = qkd_path(pair.first, pair.second, policy_).has_value();
  if (!qkd_ok) {
    if (qkd_path(pair.first, pair.second, policy_, PathCheck::Status)) qkd_reason = SelectReason::BufferLow;
    else if (qkd_path(pair.first, pair.second, policy_, PathCheck::Topology)) qkd_reason = SelectReason::LinkDown;
    else qkd_reason = SelectReason::NoQkd;
  }
  for (SourceKind s : policy_.source_preference) {
    if (s == SourceKind::Qkd && qkd_ok) return {pair, SourceKind::Qkd, SelectReason::QkdOk, now};
    if (s == SourceKind::Pqc) {
      bool qkd_first = policy_.source_preference.front() == SourceKind::Qkd;
      return {pair, SourceKind::Pqc, qkd_first ? qkd_reason : SelectReason::PolicyPreference, now};
    }
  }
  // QKD-only policy with QKD unusable: report QKD with the failure reason.
  d.source = SourceKind::Qkd;
  d.reason = qkd_reason;
  return d;
}

SourceDecision Controller::apply(const NodePair& pair, SimTime now) {
  SourceDecision want = evaluate(pair, now);
  auto it = pairs_.find(pair);
  if (it == pairs_.end()) {
    pairs_.emplace(pair, PairState{want.source, std::nullopt});
    return want;
  }
  PairState& st = it->second;
  if (want.source == st.current) return want;
  if (st.current == SourceKind::Pqc && want.source == SourceKind::Qkd && st.last_switch &&
      now - *st.last_switch < from_s(policy_.hysteresis_s)) {
    return {pair, SourceKind::Pqc, SelectReason::HysteresisHold, now};
  }
  pending_.push_back({pair, st.current, want.source, want.reason, now});
  st.current = want.source;
  st.last_switch = now;
  return want;
}

SourceDecision Controller::select_source(const NodePair& pair, SimTime now) {
  std::lock_guard lock(mu_);
  check_node(pair.first);
  check_node(pair.second);
  log_event(json{{"op", "select"}, {"a", pair.first.value}, {"b", pair.second.value}, {"at_us", now.count()}});
  SourceDecision d = apply(pair, now);
  log_output(json{{"op", "select"}, {"decision", decision_to_json(d)}});
  return d;
}

std::vector<SwitchAction> Controller::policy_tick(SimTime now) {
  std::lock_guard lock(mu_);
  log_event(json{{"op", "tick"}, {"at_us", now.count()}});
  std::vector<NodePair> active;
  for (const auto& [pair, st] : pairs_) active.push_back(pair);
  for (const auto& pair : active) apply(pair, now);
  std::vector<SwitchAction> out;
  out.swap(pending_);
  json arr = json::array();
  for (const auto& a : out) arr.push_back(a.to_json());
  log_output(json{{"op", "tick"}, {"actions", arr}});
  return out;
}

std::optional<SourceKind> Controller::current_source(const NodePair& pair) const {
  std::lock_guard lock(mu_);
  auto it = pairs_.find(pair);
  if (it == pairs_.end()) return std::nullopt;
  return it->second.current;
}

Agent& Controller::agent_for(const NodeId& id) {
  auto it = agents_.find(id);
  if (it == agents_.end() || !it->second->reachable()) fail(ErrorCode::NodeUnreachable, id.value);
  return *it->second;
}

RelayOutcome Controller::relay_key(const PathPlan& plan, std::size_t out_bits, SimTime now) {
  std::lock_guard lock(mu_);
  if (plan.kind != PathKind::RelayVia || plan.nodes.size() < 3 || plan.links.size() + 1 != plan.nodes.size())
    fail(ErrorCode::InvalidDescriptor, "relay needs a RELAY_VIA plan");
  const std::size_t block = policy_.block_size_bits;
  if (out_bits == 0 || out_bits % block != 0)
    fail(ErrorCode::BadSize, "relay size must be a multiple of " + std::to_string(block) + " bits");
  const std::size_t blocks = out_bits / block;

  std::vector<Agent*> agents;
  for (const auto& n : plan.nodes) agents.push_back(&agent_for(n));
  for (std::size_t i = 0; i < plan.links.size(); ++i) {
    auto it = links_.find(plan.links[i]);
    if (it == links_.end()) fail(ErrorCode::UnknownLink, plan.links[i]);
    if (NodePair(it->second.link.a, it->second.link.b) != NodePair(plan.nodes[i], plan.nodes[i + 1]))
      fail(ErrorCode::InvalidDescriptor, plan.links[i] + " does not join hop " + std::to_string(i));
    if (!usable(it->second)) fail(ErrorCode::NodeUnreachable, "link " + plan.links[i] + " is down");
    for (auto [self, peer] : {std::pair{agents[i], agents[i + 1]}, std::pair{agents[i + 1], agents[i]}}) {
      if (self->store().available_blocks(peer->node(), plan.links[i]) < blocks)
        fail(ErrorCode::InsufficientKeyMaterial, "hop " + plan.links[i] + " at " + self->node().value);
    }
  }

  RelayOutcome out;
  out.origin = plan.relay_origin();
  out.bits = out_bits;
  const Bytes key = agents.front()->fresh_key(out_bits / 8);
  Bytes carried = key;
  for (std::size_t i = 0; i < plan.links.size(); ++i) {
    out.wire.push_back(agents[i]->wrap(i, plan.links[i], plan.nodes[i + 1], carried, block, sync_));
    carried = agents[i + 1]->unwrap(out.wire.back());
  }
  if (carried != key) fail(ErrorCode::AuthFailure, "relayed key altered in transit");

  out.key_id = KeyId(source_tag(out.origin), ++relay_counters_[out.origin]);
  const NodeId& a = plan.nodes.front();
  const NodeId& b = plan.nodes.back();
  keystore::KeyBlock ka{out.key_id, key, out.origin, b, keystore::Technology::Relayed, now, now + keystore::kDefaultKeyLifetime};
  keystore::KeyBlock kb = ka;
  kb.peer = a;
  agents.front()->store().ingest(std::move(ka));
  agents.back()->store().ingest(std::move(kb));
  return out;
}

void Controller::AgentSync::claim(const NodeId& peer, const KeyId& id, SimTime synced_at) {
  std::lock_guard lock(owner_.mu_);
  owner_.agent_for(peer).store().claim(id, synced_at);
  ++owner_.sync_messages_;
}

void Controller::AgentSync::discard(const NodeId& peer, const KeyId& id) {
  std::lock_guard lock(owner_.mu_);
  owner_.agent_for(peer).store().discard(id);
  ++owner_.sync_messages_;
}

std::size_t Controller::sync_messages() const {
  std::lock_guard lock(mu_);
  return sync_messages_;
}

std::vector<NodeDescriptor> Controller::nodes() const {
  std::lock_guard lock(mu_);
  std::vector<NodeDescriptor> out;
  for (const auto& [id, d] : nodes_) out.push_back(d);
  return out;
}

std::optional<NodeDescriptor> Controller::node(const NodeId& id) const {
  std::lock_guard lock(mu_);
  auto it = nodes_.find(id);
  if (it == nodes_.end()) return std::nullopt;
  return it->second;
}

std::vector<LinkView> Controller::links() const {
  std::lock_guard lock(mu_);
  std::vector<LinkView> out;
  for (const auto& [id, v] : links_) out.push_back(v);
  return out;
}

LinkView Controller::link(const std::string& link_id) const {
  std::lock_guard lock(mu_);
  auto it = links_.find(link_id);
  if (it == links_.end()) fail(ErrorCode::UnknownLink, link_id);
  return it->second;
}

std::optional<NodeId> Controller::hub() const {
  std::lock_guard lock(mu_);
  for (const auto& [id, d] : nodes_)
    if (d.role == NodeRole::Hub) return id;
  return std::nullopt;
}

std::vector<NodeId> Controller::peers_of(const NodeId& node) const {
  std::lock_guard lock(mu_);
  check_node(node);
  std::vector<NodeId> out;
  for (const auto& [id, d] : nodes_)
    if (id != node) out.push_back(id);
  return out;
}

json Controller::handle_agent_message(const json& message) {
  try {
    const std::string type = message.at("type").get<std::string>();
    if (type == "register") {
      register_node(node_from_json(message.at("node")));
      return json{{"type", "ack"}, {"node", message.at("node").at("node_id")}};
    }
    if (type == "report") {
      bool applied = report_link_state(message.at("link").get<std::string>(),
                                       qkd::link_status_from_string(message.at("status").get<std::string>()),
                                       message.at("buffer_bits").get<std::uint64_t>(),
                                       SimTime{message.at("at_us").get<std::int64_t>()});
      return json{{"type", "ack"}, {"applied", applied}};
    }
    if (type == "path_request") {
      auto plan = compute_key_path(message.at("from").get<std::string>(), message.at("to").get<std::string>());
      return json{{"type", "path"}, {"plan", plan.to_json()}};
    }
    fail(ErrorCode::SchemaError, "unknown agent message type " + type);
  } catch (const Error& e) {
    return json{{"type", "error"}, {"error", std::string(to_string(e.code()))}, {"message", e.what()}};
  } catch (const json::exception& e) {
    return json{{"type", "error"}, {"error", "SchemaError"}, {"message", e.what()}};
  }
}

std::vector<json> Controller::replay(const std::vector<json>& events, Policy policy) {
  Controller c(std::move(policy));
  for (const auto& e : events) {
    const std::string op = e.at("op").get<std::string>();
    SimTime at{e.value("at_us", std::int64_t{0})};
    try {
      if (op == "register_node") c.register_node(node_from_json(e.at("node")));
      else if (op == "register_link")
        c.register_link({e.at("link").get<std::string>(), e.at("a").get<std::string>(), e.at("b").get<std::string>(),
                         keystore::technology_from_string(e.at("technology").get<std::string>())});
      else if (op == "report")
        c.report_link_state(e.at("link").get<std::string>(), qkd::link_status_from_string(e.at("status").get<std::string>()),
                            e.at("buffer_bits").get<std::uint64_t>(), at);
      else if (op == "pqc") c.set_pqc_available(NodePair(e.at("a").get<std::string>(), e.at("b").get<std::string>()), e.at("up").get<bool>(), at);
      else if (op == "path") c.compute_key_path(e.at("from").get<std::string>(), e.at("to").get<std::string>());
      else if (op == "select") c.select_source(NodePair(e.at("a").get<std::string>(), e.at("b").get<std::string>()), at);
      else if (op == "tick") c.policy_tick(at);
      else fail(ErrorCode::SchemaError, "unknown event op " + op);
    } catch (const Error& err) {
      if (err.code() == ErrorCode::SchemaError) throw;
    }
  }
  return c.outputs_;
}

}  // namespace qsvpn::sdn
