#include "qsvpn/ike/dmvpn.hpp"

#include "qsvpn/common/error.hpp"

namespace qsvpn::ike {

using sim::json;

namespace {
constexpr const char* kNhrp = "nhrp";
constexpr const char* kData = "data";
}  // namespace

DmvpnOverlay::DmvpnOverlay(sim::Transport& transport, NodeId hub, std::map<NodeId, IkeDaemon*> daemons,
                           OverlayConfig config)
    : transport_(transport), loop_(transport.loop()), hub_(std::move(hub)), daemons_(std::move(daemons)), config_(config) {
  if (!daemons_.count(hub_)) fail(ErrorCode::InvalidDescriptor, "hub " + hub_.value + " has no IKE daemon");
  for (const auto& [node, _] : daemons_) {
    NodeId n = node;
    transport_.on(n, kNhrp, [this, n](const sim::Envelope& env) { on_nhrp(n, env); });
    transport_.on(n, kData, [this, n](const sim::Envelope& env) { on_data(n, env); });
  }
}

// ---- NHRP ----

void DmvpnOverlay::nhrp_request(const NodeId& from, json msg, NhrpCallback cb, ErrorCode on_timeout) {
  std::uint64_t req = next_req_++;
  msg["req"] = req;
  try {
    transport_.send(from, hub_, kNhrp, std::move(msg));
  } catch (const Error&) {
    if (cb) cb(NhrpResult{std::nullopt, ErrorCode::HubUnreachable, SimDuration{0}});
    return;
  }
  NhrpPending p{std::move(cb), loop_.now()};
  p.timer = loop_.schedule_in(from_ms(config_.nhrp_timeout_ms), [this, req, on_timeout] {
    auto it = nhrp_pending_.find(req);
    if (it == nhrp_pending_.end()) return;
    nhrp_complete(req, NhrpResult{std::nullopt, on_timeout, loop_.now() - it->second.sent_at});
  });
  nhrp_pending_.emplace(req, std::move(p));
}

void DmvpnOverlay::nhrp_complete(std::uint64_t req, NhrpResult result) {
  auto it = nhrp_pending_.find(req);
  if (it == nhrp_pending_.end()) return;
  NhrpPending p = std::move(it->second);
  nhrp_pending_.erase(it);
  loop_.cancel(p.timer);
  if (p.cb) p.cb(result);
}

void DmvpnOverlay::nhrp_register(const NodeId& spoke, const std::string& nbma, NhrpCallback cb) {
  if (!is_spoke(spoke)) fail(ErrorCode::UnknownSpoke, spoke.value);
  nhrp_request(spoke, json{{"type", "register"}, {"spoke", spoke.value}, {"nbma", nbma}}, std::move(cb),
               ErrorCode::HubUnreachable);
}

void DmvpnOverlay::nhrp_resolve(const NodeId& requester, const NodeId& dest, NhrpCallback cb) {
  nhrp_request(requester, json{{"type", "resolve"}, {"requester", requester.value}, {"dest", dest.value}}, std::move(cb),
               ErrorCode::HubUnreachable);
}

void DmvpnOverlay::on_nhrp(const NodeId& at, const sim::Envelope& env) {
  const json& m = env.body;
  const std::string type = m.at("type");
  std::uint64_t req = m.at("req");
  if (at == hub_) {
    json reply{{"type", "reply"}, {"req", req}};
    if (type == "register") {
      NodeId spoke = m.at("spoke").get<std::string>();
      table_[spoke] = NhrpEntry{spoke, m.at("nbma").get<std::string>(), loop_.now()};
      reply["nbma"] = table_[spoke].nbma;
    } else {
      auto req_it = table_.find(m.at("requester").get<std::string>());
      auto dst_it = table_.find(m.at("dest").get<std::string>());
      if (req_it == table_.end() || dst_it == table_.end())
        reply["error"] = "UnknownSpoke";
      else
        reply["nbma"] = dst_it->second.nbma;
    }
    try {
      transport_.send(hub_, env.from, kNhrp, std::move(reply));
    } catch (const Error&) {
    }
    return;
  }
  auto it = nhrp_pending_.find(req);
  if (it == nhrp_pending_.end()) return;
  NhrpResult r;
  r.latency = loop_.now() - it->second.sent_at;
  if (m.contains("error"))
    r.error = ErrorCode::UnknownSpoke;
  else
    r.nbma = m.at("nbma").get<std::string>();
  nhrp_complete(req, r);
}

// ---- data plane ----

void DmvpnOverlay::note_hops(const NodeId& src, const NodeId& dst, int hops) {
  auto key = std::make_pair(src, dst);
  auto it = last_hops_.find(key);
  int prev = it == last_hops_.end() ? 0 : it->second;
  if (prev == hops) return;
  last_hops_[key] = hops;
  HopEvent ev{loop_.now(), src, dst, prev, hops};
  hop_events_.push_back(ev);
  for (auto& cb : hop_observers_) cb(ev);
}

void DmvpnOverlay::ensure_tunnel(const NodeId& src, const NodeId& dst) {
  NodePair pair(src, dst);
  if (pending_.count(pair)) return;
  pending_.insert(pair);
  nhrp_resolve(src, dst, [this, src, dst, pair](const NhrpResult& r) {
    if (r.error) {
      pending_.erase(pair);
      return;
    }
    daemons_.at(src)->initiate(dst, config_.mode, [this, pair](const SetupRecord&) { pending_.erase(pair); });
  });
}

void DmvpnOverlay::ship(const NodeId& from, const NodeId& to, std::uint64_t pid, const EspPacket& p) {
  json body{{"pid", pid}, {"sa_id", p.sa_id}, {"seq", p.seq}, {"sealed", to_hex(p.sealed)}};
  if (!transport_.send(from, to, kData, std::move(body))) lose(pid, ErrorCode::LinkDown);
}

void DmvpnOverlay::lose(std::uint64_t pid, ErrorCode code) {
  auto it = in_flight_.find(pid);
  if (it == in_flight_.end()) return;
  DeliveryRecord rec = it->second.record;
  in_flight_.erase(it);
  switch (code) {
    case ErrorCode::DecryptFailure: ++stats_.decrypt_failures; break;
    case ErrorCode::ReplayedSequence: ++stats_.replayed; break;
    case ErrorCode::ScenarioPanic: ++stats_.payload_mismatches; break;
    case ErrorCode::LinkDown: ++stats_.transport_lost; break;
    default: ++stats_.no_sa_drops; break;
  }
  for (auto& cb : loss_observers_) cb(rec, code);
}

DeliveryRecord DmvpnOverlay::forward_packet(const NodeId& src, const NodeId& dst, Bytes payload) {
  if (src == dst || !daemons_.count(src) || !daemons_.count(dst))
    fail(ErrorCode::NoRoute, src.value + " -> " + dst.value);
  IkeDaemon& d = *daemons_.at(src);
  bool spoke_pair = is_spoke(src) && is_spoke(dst);
  bool direct = !spoke_pair || d.outbound(dst) != nullptr;
  NodeId next = direct ? dst : hub_;
  if (!d.outbound(next)) fail(ErrorCode::NoRoute, src.value + " has no SA toward " + next.value);
  if (!direct && !transport_.node_up(hub_)) fail(ErrorCode::NoRoute, "hub down and no direct SA " + src.value + "-" + dst.value);

  std::uint64_t pid = next_packet_++;
  DeliveryRecord rec{pid, src, dst, direct ? 1 : 2, loop_.now(), d.outbound(next)->sa_id};
  json inner{{"src", src.value}, {"dst", dst.value}, {"data", to_hex(payload)}};
  EspPacket p = d.protect_to(next, to_bytes(inner.dump()));
  try {
    transport_.route(src, next);
  } catch (const Error&) {
    fail(ErrorCode::NoRoute, "no transport path " + src.value + " -> " + next.value);
  }
  ++stats_.sent;
  ++(direct ? stats_.direct : stats_.via_hub);
  if (spoke_pair) note_hops(src, dst, rec.hops);
  in_flight_.emplace(pid, InFlight{rec, std::move(payload)});
  ship(src, next, pid, p);
  if (!direct) ensure_tunnel(src, dst);
  return rec;
}

void DmvpnOverlay::on_data(const NodeId& at, const sim::Envelope& env) {
  const json& m = env.body;
  std::uint64_t pid = m.at("pid");
  EspPacket p{m.at("sa_id").get<std::string>(), m.at("seq").get<std::uint64_t>(), from_hex(m.at("sealed").get<std::string>())};
  Bytes plain;
  try {
    plain = daemons_.at(at)->unprotect(p);
  } catch (const Error& e) {
    lose(pid, e.code());
    return;
  }
  json inner = json::parse(std::string(plain.begin(), plain.end()));
  NodeId dst = inner.at("dst").get<std::string>();
  if (dst != at) {
    // hub relay: decrypt under the inbound spoke SA, re-protect toward the destination
    try {
      EspPacket out = daemons_.at(at)->protect_to(dst, plain);
      ship(at, dst, pid, out);
    } catch (const Error& e) {
      lose(pid, e.code());
    }
    return;
  }
  auto it = in_flight_.find(pid);
  if (it == in_flight_.end()) return;
  if (from_hex(inner.at("data").get<std::string>()) != it->second.payload) {
    lose(pid, ErrorCode::ScenarioPanic);
    return;
  }
  in_flight_.erase(it);
  ++stats_.delivered;
}

}  // namespace qsvpn::ike
