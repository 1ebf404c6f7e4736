#include "qsvpn/ike/daemon.hpp"

#include <algorithm>

#include "qsvpn/common/crypto.hpp"
#include "qsvpn/common/error.hpp"

namespace qsvpn::ike {

using sim::json;

std::string_view to_string(IkeMode m) noexcept { return m == IkeMode::EcdhOnly ? "ECDH_ONLY" : "PPK"; }

std::string_view to_string(SaStatus s) noexcept {
  switch (s) {
    case SaStatus::Negotiating: return "NEGOTIATING";
    case SaStatus::Ready: return "READY";
    case SaStatus::Rekeyed: return "REKEYED";
    case SaStatus::Expired: return "EXPIRED";
    case SaStatus::Failed: return "FAILED";
  }
  return "?";
}

std::string_view to_string(SetupKind k) noexcept {
  switch (k) {
    case SetupKind::Initial: return "INITIAL";
    case SetupKind::Rekey: return "REKEY";
    case SetupKind::Probe: return "PROBE";
  }
  return "?";
}

namespace {
SetupKind setup_kind_from_string(std::string_view s) {
  if (s == "REKEY") return SetupKind::Rekey;
  if (s == "PROBE") return SetupKind::Probe;
  return SetupKind::Initial;
}
}  // namespace

IkeMode ike_mode_from_string(std::string_view s) {
  if (s == "ECDH_ONLY") return IkeMode::EcdhOnly;
  if (s == "PPK") return IkeMode::Ppk;
  fail(ErrorCode::SchemaError, "unknown IKE mode " + std::string(s));
}

std::string SetupRecord::status() const { return error ? std::string(qsvpn::to_string(*error)) : "READY"; }

namespace {

std::uint64_t nonzero(DeterministicRng& rng) {
  std::uint64_t v = 0;
  while (v == 0) v = rng.next_u64();
  return v;
}

ErrorCode responder_fetch_error(ErrorCode c) {
  switch (c) {
    case ErrorCode::UnknownPpkId:
    case ErrorCode::KeyAlreadyConsumed:
    case ErrorCode::KeyExpired:
    case ErrorCode::SyncTimeout:
      return ErrorCode::PpkIdUnknownAtResponder;
    default:
      return c;
  }
}

}  // namespace

IkeDaemon::IkeDaemon(NodeId node, sim::Transport& transport, const DhProvider& dh, IkeConfig config, std::uint64_t seed,
                     skip::SkipClient* skip)
    : node_(std::move(node)),
      transport_(transport),
      loop_(transport.loop()),
      dh_(dh),
      config_(config),
      rng_(DeterministicRng(seed).fork("ike:" + node_.value)),
      skip_(skip) {
  if (config_.rekey_margin_s >= config_.lifetime_s) fail(ErrorCode::SchemaError, "rekey margin must be below lifetime");
  transport_.on(node_, kIkeChannel, [this](const sim::Envelope& env) { receive(env); });
}

void IkeDaemon::set_psk(const NodeId& peer, Bytes psk) { psks_[peer] = std::move(psk); }

const Bytes& IkeDaemon::psk_for(const NodeId& peer) const {
  auto it = psks_.find(peer);
  if (it == psks_.end()) fail(ErrorCode::AuthFailure, "no PSK for " + peer.value);
  return it->second;
}

std::string IkeDaemon::initiate(const NodeId& peer, IkeMode mode, SetupCallback done, SetupKind kind) {
  if (kind == SetupKind::Rekey) fail(ErrorCode::SchemaError, "rekeys start from an existing SA");
  return start(peer, mode, kind, {}, std::move(done));
}

std::string IkeDaemon::start(const NodeId& peer, IkeMode mode, SetupKind kind, const std::string& replaces,
                             SetupCallback done) {
  std::string id = node_.value + "#" + std::to_string(++counter_);
  Pending p{id, peer, mode, kind, replaces, loop_.now()};
  p.record.sa_id = id;
  p.record.initiator = node_;
  p.record.responder = peer;
  p.record.mode = mode;
  p.record.kind = kind;
  p.record.replaces = replaces;
  p.record.started_at = loop_.now();
  p.done = std::move(done);
  pending_.emplace(id, std::move(p));
  loop_.schedule_in(compute(), [this, id] { send_init(id); });
  return id;
}

void IkeDaemon::send(const NodeId& peer, json msg) { transport_.send(node_, peer, kIkeChannel, std::move(msg)); }

void IkeDaemon::arm_timeout(Pending& p) {
  std::string id = p.sa_id;
  p.timer = loop_.schedule_in(from_ms(config_.timeout_ms), [this, id] {
    if (pending_.count(id)) finish(id, ErrorCode::Timeout);
  });
}

void IkeDaemon::receive(const sim::Envelope& env) {
  const json& m = env.body;
  const std::string type = m.at("type");
  if (type == "sa_init_req")
    on_init_req(env.from, m);
  else if (type == "sa_init_resp")
    on_init_resp(m);
  else if (type == "auth_req")
    on_auth_req(env.from, m);
  else if (type == "auth_resp")
    on_auth_resp(m);
}

// ---- initiator ----

void IkeDaemon::send_init(const std::string& id) {
  auto it = pending_.find(id);
  if (it == pending_.end()) return;
  Pending& p = it->second;
  p.dh = dh_.generate(rng_);
  p.ni = rng_.bytes(32);
  p.spi_i = nonzero(rng_);
  json msg{{"type", "sa_init_req"},
           {"sa_id", id},
           {"spi_i", p.spi_i},
           {"ke", to_hex(p.dh.public_key)},
           {"ni", to_hex(p.ni)},
           {"dh_group", dh_.name()},
           {"use_ppk", p.mode == IkeMode::Ppk},
           {"fresh_ppk_rekey", config_.rekey_fresh_ppk},
           {"kind", to_string(p.kind)},
           {"replaces", p.replaces}};
  try {
    send(p.peer, std::move(msg));
  } catch (const Error&) {
    finish(id, ErrorCode::TransportDown);
    return;
  }
  arm_timeout(p);
}

void IkeDaemon::on_init_resp(const json& m) {
  auto it = pending_.find(m.at("sa_id").get<std::string>());
  if (it == pending_.end()) return;
  Pending& p = it->second;
  loop_.cancel(p.timer);
  if (m.contains("error")) {
    finish(p.sa_id, error_code_from_string(m["error"].get<std::string>()).value_or(ErrorCode::AuthFailure));
    return;
  }
  p.spi_r = m.at("spi_r").get<std::uint64_t>();
  p.nr = from_hex(m.at("nr").get<std::string>());
  try {
    Bytes shared = dh_.derive(p.dh.private_key, from_hex(m.at("ke").get<std::string>()));
    p.ks = build_key_schedule(shared, p.ni, p.nr, p.spi_i, p.spi_r, std::nullopt, dh_.name());
  } catch (const Error& e) {
    finish(p.sa_id, e.code());
    return;
  }
  p.init_done = loop_.now();
  p.record.latency.t_sa_init = p.init_done - p.started_at;
  p.peer_fresh_ppk = m.value("fresh_ppk_rekey", false);
  p.use_ppk = p.mode == IkeMode::Ppk && m.value("use_ppk", false);
  if (p.mode == IkeMode::Ppk && !p.use_ppk && config_.require_ppk) {
    finish(p.sa_id, ErrorCode::AuthFailure);
    return;
  }
  get_key_phase(p);
}

void IkeDaemon::get_key_phase(Pending& p) {
  std::string id = p.sa_id;
  if (!p.use_ppk) {
    begin_auth(id);
    return;
  }
  if (p.kind == SetupKind::Rekey && !(config_.rekey_fresh_ppk && p.peer_fresh_ppk)) {
    auto old = sas_.find(p.replaces);
    if (old != sas_.end() && old->second.ppk_used) {
      p.inherited = true;
      begin_auth(id);
      return;
    }
  }
  try {
    if (!skip_) fail(ErrorCode::NoKeyAvailable, "no key source configured at " + node_.value);
    auto g = skip_->get_key(p.peer, config_.ppk_octets, loop_.now());
    p.grant = std::move(g.value);
    loop_.schedule_in(g.latency, [this, id] { begin_auth(id); });
  } catch (const Error& e) {
    bool degrade = p.kind == SetupKind::Rekey ? config_.rekey_fallback == RekeyFallback::EcdhOnly : !config_.require_ppk;
    if (!degrade) {
      finish(id, e.code());
      return;
    }
    p.use_ppk = false;
    begin_auth(id);
  }
}

void IkeDaemon::begin_auth(const std::string& id) {
  auto it = pending_.find(id);
  if (it == pending_.end()) return;
  Pending& p = it->second;
  p.auth_start = loop_.now();
  p.record.latency.t_get_key = p.auth_start - p.init_done;
  loop_.schedule_in(compute(), [this, id] {
    auto it2 = pending_.find(id);
    if (it2 == pending_.end()) return;
    Pending& q = it2->second;
    std::optional<Bytes> ppk;
    if (q.grant) ppk = q.grant->ppk;
    if (q.inherited) ppk = sas_.at(q.replaces).key_schedule.sk_d;
    try {
      q.ks.ppk = ppk;
      q.ks.sk_d = ppk ? mix_ppk(*ppk, q.ks.sk_d_prime) : q.ks.sk_d_prime;
      json msg{{"type", "auth_req"},
               {"sa_id", id},
               {"auth", to_hex(auth_tag(psk_for(q.peer), "auth-i", q.ni, q.nr, q.spi_i, q.spi_r, q.ks.sk_d))},
               {"inherit", q.inherited}};
      if (q.grant) msg["ppk_id"] = q.grant->ppk_id.hex();
      send(q.peer, std::move(msg));
    } catch (const Error& e) {
      finish(id, e.code() == ErrorCode::LinkDown ? ErrorCode::TransportDown : e.code());
      return;
    }
    arm_timeout(q);
  });
}

void IkeDaemon::on_auth_resp(const json& m) {
  auto it = pending_.find(m.at("sa_id").get<std::string>());
  if (it == pending_.end()) return;
  Pending& p = it->second;
  loop_.cancel(p.timer);
  if (m.contains("error")) {
    finish(p.sa_id, error_code_from_string(m["error"].get<std::string>()).value_or(ErrorCode::AuthFailure));
    return;
  }
  Bytes expect = auth_tag(psk_for(p.peer), "auth-r", p.ni, p.nr, p.spi_i, p.spi_r, p.ks.sk_d);
  if (!crypto::constant_time_equal(expect, from_hex(m.at("auth").get<std::string>()))) {
    finish(p.sa_id, ErrorCode::AuthFailure);
    return;
  }
  p.record.latency.t_ike_auth = loop_.now() - p.auth_start;

  SecurityAssociation sa;
  sa.sa_id = p.sa_id;
  sa.tunnel_id = "tun:" + NodePair(node_, p.peer).label();
  sa.local = node_;
  sa.peer = p.peer;
  sa.role = Role::Initiator;
  sa.mode = p.mode;
  sa.kind = p.kind;
  sa.replaces = p.replaces;
  sa.spi_i = p.spi_i;
  sa.spi_r = p.spi_r;
  sa.key_schedule = p.ks;
  sa.lifetime_s = config_.lifetime_s;
  sa.created_at = loop_.now();
  sa.ppk_used = p.ks.ppk.has_value();
  sa.ppk_inherited = p.inherited;
  sa.qr = sa.ppk_used;
  sa.latency = p.record.latency;
  if (p.grant) {
    sa.ppk_id = p.grant->ppk_id;
    p.record.source = sdn::to_string(p.grant->source);
    p.record.path = sdn::to_string(p.grant->path);
    p.record.technology = keystore::to_string(p.grant->technology);
  } else if (p.inherited) {
    sa.ppk_id = sas_.at(p.replaces).ppk_id;
    p.record.source = "INHERITED";
  }
  p.record.ppk_id = sa.ppk_id;
  std::string id = sa.sa_id;
  bool probe = sa.kind == SetupKind::Probe;
  install(std::move(sa));
  if (!probe) activate(id);
  finish(id, std::nullopt);
}

void IkeDaemon::finish(const std::string& id, std::optional<ErrorCode> error) {
  auto it = pending_.find(id);
  if (it == pending_.end()) return;
  Pending p = std::move(it->second);
  pending_.erase(it);
  loop_.cancel(p.timer);
  p.record.finished_at = loop_.now();
  p.record.error = error;
  if (error && p.kind == SetupKind::Rekey && config_.auto_rekey) {
    auto old = sas_.find(p.replaces);
    SimDuration retry = from_s(config_.rekey_retry_s);
    if (old != sas_.end() && old->second.status == SaStatus::Ready && loop_.now() + retry < old->second.expires_at()) {
      std::string old_id = p.replaces;
      loop_.schedule_in(retry, [this, old_id] { rekey(old_id); });
    }
  }
  if (p.done) p.done(p.record);
  for (auto& cb : setup_observers_) cb(p.record);
}

// ---- responder ----

void IkeDaemon::respond_error(const NodeId& peer, const std::string& sa_id, ErrorCode code) {
  try {
    send(peer, json{{"type", "auth_resp"}, {"sa_id", sa_id}, {"error", std::string(qsvpn::to_string(code))}});
  } catch (const Error&) {
  }
}

void IkeDaemon::on_init_req(const NodeId& from, const json& m) {
  std::string id = m.at("sa_id");
  if (!psks_.count(from)) {
    try {
      send(from, json{{"type", "sa_init_resp"}, {"sa_id", id}, {"error", "AuthFailure"}});
    } catch (const Error&) {
    }
    return;
  }
  HalfOpen h;
  h.sa_id = id;
  h.peer = from;
  h.mode = m.value("use_ppk", false) ? IkeMode::Ppk : IkeMode::EcdhOnly;
  h.kind = setup_kind_from_string(m.value("kind", "INITIAL"));
  h.replaces = m.value("replaces", "");
  h.spi_i = m.at("spi_i").get<std::uint64_t>();
  h.ni = from_hex(m.at("ni").get<std::string>());
  Bytes ke_i = from_hex(m.at("ke").get<std::string>());

  SimDuration delay = compute();
  bool use_ppk = false;
  if (h.mode == IkeMode::Ppk && skip_) {
    try {
      auto caps = skip_->get_capabilities(loop_.now());
      delay += caps.latency;
      const auto& c = caps.value;
      use_ppk = std::count(c.supported_ppk_lengths.begin(), c.supported_ppk_lengths.end(), config_.ppk_octets) > 0 &&
                std::count(c.peer_identities.begin(), c.peer_identities.end(), skip::SkipService::identity_for(from)) > 0;
    } catch (const Error&) {
      use_ppk = false;
    }
  }
  loop_.schedule_in(delay, [this, h = std::move(h), ke_i = std::move(ke_i), use_ppk]() mutable {
    json resp{{"type", "sa_init_resp"}, {"sa_id", h.sa_id}};
    try {
      DhKeyPair kp = dh_.generate(rng_);
      h.nr = rng_.bytes(32);
      h.spi_r = nonzero(rng_);
      h.ks = build_key_schedule(dh_.derive(kp.private_key, ke_i), h.ni, h.nr, h.spi_i, h.spi_r, std::nullopt, dh_.name());
      resp["spi_r"] = h.spi_r;
      resp["ke"] = to_hex(kp.public_key);
      resp["nr"] = to_hex(h.nr);
      resp["use_ppk"] = use_ppk;
      resp["fresh_ppk_rekey"] = config_.rekey_fresh_ppk;
    } catch (const Error& e) {
      resp["error"] = std::string(qsvpn::to_string(e.code()));
    }
    std::string id = h.sa_id;
    NodeId peer = h.peer;
    if (!resp.contains("error")) {
      h.timer = loop_.schedule_in(from_ms(config_.timeout_ms) * 2, [this, id] {
        auto it = half_open_.find(id);
        if (it != half_open_.end() && !it->second.busy) half_open_.erase(it);
      });
      half_open_[id] = std::move(h);
    }
    try {
      send(peer, std::move(resp));
    } catch (const Error&) {
    }
  });
}

void IkeDaemon::on_auth_req(const NodeId& from, const json& m) {
  auto it = half_open_.find(m.at("sa_id").get<std::string>());
  if (it == half_open_.end() || it->second.busy || it->second.peer != from) return;
  HalfOpen& h = it->second;
  h.busy = true;
  loop_.cancel(h.timer);
  std::string id = h.sa_id;

  std::optional<Bytes> ppk;
  std::optional<KeyId> ppk_id;
  SimDuration latency{0};
  std::optional<ErrorCode> err;
  try {
    if (m.contains("ppk_id")) {
      if (!skip_) fail(ErrorCode::PpkIdUnknownAtResponder, "no key source at " + node_.value);
      ppk_id = KeyId::from_hex(m["ppk_id"].get<std::string>());
      auto r = skip_->get_key_by_id(*ppk_id, loop_.now());
      ppk = std::move(r.value);
      latency = r.latency;
    } else if (m.value("inherit", false)) {
      auto old = sas_.find(h.replaces);
      if (old == sas_.end() || !old->second.ppk_used) fail(ErrorCode::PpkIdUnknownAtResponder, "nothing to inherit");
      ppk = old->second.key_schedule.sk_d;
      ppk_id = old->second.ppk_id;
    } else if (config_.require_ppk) {
      fail(ErrorCode::AuthFailure, "PPK required by " + node_.value);
    }
  } catch (const Error& e) {
    err = responder_fetch_error(e.code());
  }
  if (err) {
    half_open_.erase(it);
    respond_error(from, id, *err);
    return;
  }
  Bytes auth_i = from_hex(m.at("auth").get<std::string>());
  bool inherited = m.value("inherit", false);
  loop_.schedule_in(latency + compute(), [this, id, from, ppk = std::move(ppk), ppk_id, auth_i = std::move(auth_i), inherited] {
    auto it2 = half_open_.find(id);
    if (it2 == half_open_.end()) return;
    HalfOpen h = std::move(it2->second);
    half_open_.erase(it2);
    try {
      h.ks.ppk = ppk;
      h.ks.sk_d = ppk ? mix_ppk(*ppk, h.ks.sk_d_prime) : h.ks.sk_d_prime;
      const Bytes& psk = psk_for(from);
      if (!crypto::constant_time_equal(auth_i, auth_tag(psk, "auth-i", h.ni, h.nr, h.spi_i, h.spi_r, h.ks.sk_d)))
        fail(ErrorCode::AuthFailure, "initiator AUTH does not verify");
      Bytes auth_r = auth_tag(psk, "auth-r", h.ni, h.nr, h.spi_i, h.spi_r, h.ks.sk_d);

      SecurityAssociation sa;
      sa.sa_id = id;
      sa.tunnel_id = "tun:" + NodePair(node_, from).label();
      sa.local = node_;
      sa.peer = from;
      sa.role = Role::Responder;
      sa.mode = h.mode;
      sa.kind = h.kind;
      sa.replaces = h.replaces;
      sa.spi_i = h.spi_i;
      sa.spi_r = h.spi_r;
      sa.key_schedule = h.ks;
      sa.lifetime_s = config_.lifetime_s;
      sa.created_at = loop_.now();
      sa.ppk_used = ppk.has_value();
      sa.ppk_inherited = inherited;
      sa.qr = sa.ppk_used;
      sa.ppk_id = ppk_id;
      bool probe = sa.kind == SetupKind::Probe;
      install(std::move(sa));
      send(from, json{{"type", "auth_resp"}, {"sa_id", id}, {"auth", to_hex(auth_r)}});
      if (probe) return;
      // Switch outbound once the initiator has surely installed, or on first inbound packet.
      SimDuration settle{0};
      try {
        settle = transport_.max_delay(node_, from);
      } catch (const Error&) {
      }
      loop_.schedule_in(settle, [this, id] {
        auto s = sas_.find(id);
        if (s != sas_.end() && s->second.status == SaStatus::Ready) activate(id);
      });
    } catch (const Error& e) {
      respond_error(from, id, e.code() == ErrorCode::LinkDown ? ErrorCode::TransportDown : e.code());
    }
  });
}

// ---- SA table and data plane ----

SecurityAssociation& IkeDaemon::install(SecurityAssociation sa) {
  EspKeys keys = derive_esp_keys(sa.key_schedule.sk_d, sa.spi_i, sa.spi_r);
  bool init = sa.role == Role::Initiator;
  sa.out = EspSender(sa.sa_id, init ? keys.i2r : keys.r2i);
  sa.in = EspReceiver(sa.sa_id, init ? keys.r2i : keys.i2r);
  sa.status = SaStatus::Ready;
  std::string id = sa.sa_id;
  auto [it, inserted] = sas_.emplace(id, std::move(sa));
  if (!inserted) fail(ErrorCode::ScenarioPanic, "duplicate SA id " + id);
  SecurityAssociation& ref = it->second;
  loop_.schedule_at(ref.expires_at(), [this, id] {
    auto s = sas_.find(id);
    if (s == sas_.end()) return;
    s->second.status = SaStatus::Expired;
    auto o = outbound_.find(s->second.peer);
    if (o != outbound_.end() && o->second == id) outbound_.erase(o);
  });
  if (ref.role == Role::Initiator && ref.kind != SetupKind::Probe && config_.auto_rekey) schedule_rekey(id);
  for (auto& cb : ready_observers_) cb(ref);
  return ref;
}

void IkeDaemon::activate(const std::string& id) {
  SecurityAssociation& sa = sas_.at(id);
  auto o = outbound_.find(sa.peer);
  if (o != outbound_.end()) {
    if (o->second == id) return;
    auto old = sas_.find(o->second);
    if (old != sas_.end() && old->second.status == SaStatus::Ready) old->second.status = SaStatus::Rekeyed;
  }
  outbound_[sa.peer] = id;
}

void IkeDaemon::schedule_rekey(const std::string& id) {
  const SecurityAssociation& sa = sas_.at(id);
  SimTime at = sa.created_at + from_s(sa.lifetime_s - config_.rekey_margin_s);
  loop_.schedule_at(std::max(at, loop_.now()), [this, id] { rekey(id); });
}

void IkeDaemon::rekey(const std::string& id) {
  auto it = sas_.find(id);
  if (it == sas_.end() || it->second.status != SaStatus::Ready) return;
  auto o = outbound_.find(it->second.peer);
  if (o == outbound_.end() || o->second != id) return;
  start(it->second.peer, it->second.mode, SetupKind::Rekey, id, {});
}

const SecurityAssociation* IkeDaemon::outbound(const NodeId& peer) const {
  auto o = outbound_.find(peer);
  return o == outbound_.end() ? nullptr : &sas_.at(o->second);
}

EspPacket IkeDaemon::protect_to(const NodeId& peer, ByteView plaintext) {
  auto o = outbound_.find(peer);
  if (o == outbound_.end()) fail(ErrorCode::SaNotReady, node_.value + " has no SA to " + peer.value);
  return sas_.at(o->second).out.protect(plaintext);
}

Bytes IkeDaemon::unprotect(const EspPacket& packet) {
  auto it = sas_.find(packet.sa_id);
  if (it == sas_.end() || (it->second.status != SaStatus::Ready && it->second.status != SaStatus::Rekeyed))
    fail(ErrorCode::SaNotReady, node_.value + " cannot accept " + packet.sa_id);
  Bytes plain = it->second.in.unprotect(packet);
  const auto& sa = it->second;
  if (sa.role == Role::Responder && sa.status == SaStatus::Ready && sa.kind != SetupKind::Probe) activate(packet.sa_id);
  return plain;
}

EspPacket IkeDaemon::protect_on(const std::string& sa_id, ByteView plaintext) {
  auto it = sas_.find(sa_id);
  if (it == sas_.end() || it->second.status == SaStatus::Expired) fail(ErrorCode::SaNotReady, sa_id);
  return it->second.out.protect(plaintext);
}

const SecurityAssociation* IkeDaemon::sa(const std::string& sa_id) const {
  auto it = sas_.find(sa_id);
  return it == sas_.end() ? nullptr : &it->second;
}

std::vector<const SecurityAssociation*> IkeDaemon::sas() const {
  std::vector<const SecurityAssociation*> out;
  for (const auto& [_, sa] : sas_) out.push_back(&sa);
  return out;
}

}  // namespace qsvpn::ike
