#include "qsvpn/skip/skip.hpp"

#include <algorithm>

#include "qsvpn/common/crypto.hpp"

namespace qsvpn::skip {

namespace {

// Reservation sync that lands at the peer `offset` after the call.
class DelayedSync : public keystore::PeerSync {
 public:
  DelayedSync(keystore::PeerSync& inner, SimDuration offset) : inner_(inner), offset_(offset) {}
  void claim(const NodeId& peer, const KeyId& id, SimTime at) override { inner_.claim(peer, id, at + offset_); }
  void discard(const NodeId& peer, const KeyId& id) override { inner_.discard(peer, id); }

 private:
  keystore::PeerSync& inner_;
  SimDuration offset_;
};

bool falls_back(const Error& e) {
  switch (e.code()) {
    case ErrorCode::InsufficientKeyMaterial:
    case ErrorCode::NodeUnreachable:
    case ErrorCode::NoPathAvailable:
    case ErrorCode::ChannelDown:
    case ErrorCode::AuthFailure:
    case ErrorCode::KemFailure:
    case ErrorCode::NoKeySourceForPair:
      return true;
    default:
      return false;
  }
}

}  // namespace

SkipStatus skip_status_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::AuthFailure: return SkipStatus::Unauthorized;
    case ErrorCode::UnknownPeer:
    case ErrorCode::UnknownPpkId:
    case ErrorCode::UnknownNode: return SkipStatus::NotFound;
    case ErrorCode::KeyAlreadyConsumed: return SkipStatus::Conflict;
    case ErrorCode::KeyExpired: return SkipStatus::Gone;
    case ErrorCode::NoKeyAvailable: return SkipStatus::Unavailable;
    case ErrorCode::SyncTimeout: return SkipStatus::SyncTimedOut;
    default: return SkipStatus::BadRequest;
  }
}

json SkipCapabilities::to_json() const {
  return json{{"local_identity", local_identity},
              {"peer_identities", peer_identities},
              {"supported_ppk_lengths", supported_ppk_lengths},
              {"technologies", technologies}};
}

Bytes skip_auth_proof(ByteView psk, const std::string& client_id, ByteView challenge) {
  return crypto::hmac_sha512(psk, concat({to_bytes("skip-auth"), to_bytes(client_id), challenge}));
}

// ---------------------------------------------------------------------------

KmsPqcPool::KmsPqcPool(const kem::KemRegistry& registry, std::string params_name, PathDelayFn delay,
                       double kem_compute_ms, std::uint64_t seed)
    : registry_(registry), params_(std::move(params_name)), delay_(std::move(delay)), kem_compute_ms_(kem_compute_ms), seed_(seed) {
  if (!registry_.contains(params_)) fail(ErrorCode::UnknownParams, params_);
}

void KmsPqcPool::add_pair(keystore::KeyStore& a, keystore::KeyStore& b, Bytes credential) {
  std::lock_guard lock(mu_);
  NodePair pair(a.owner(), b.owner());
  if (pairs_.count(pair)) fail(ErrorCode::InvalidDescriptor, "duplicate PQC pair " + pair.label());
  keystore::KeyStore& first = a.owner() == pair.first ? a : b;
  keystore::KeyStore& second = a.owner() == pair.first ? b : a;
  first.add_peer(second.owner());
  second.add_peer(first.owner());
  Entry e;
  e.channel = std::make_unique<kem::KmsControlChannel>(pair.first, pair.second, std::move(credential));
  e.provider = registry_.create(params_, seed_ ^ source_tag(pair.label()));
  e.establisher = std::make_unique<kem::KmsKeyEstablisher>(kem::KmsEndpoint{pair.first, &first},
                                                           kem::KmsEndpoint{pair.second, &second}, *e.channel, *e.provider);
  pairs_.emplace(pair, std::move(e));
}

kem::KmsControlChannel& KmsPqcPool::channel(const NodePair& pair) {
  std::lock_guard lock(mu_);
  auto it = pairs_.find(pair);
  if (it == pairs_.end()) fail(ErrorCode::NoKeySourceForPair, pair.label());
  return *it->second.channel;
}

std::string KmsPqcPool::source_id(const NodePair& pair) const { return kem::KmsKeyEstablisher::source_id_for(pair); }

SimDuration KmsPqcPool::establish_now(const NodePair& pair, SimTime now) {
  kem::KmsKeyEstablisher* est = nullptr;
  {
    std::lock_guard lock(mu_);
    auto it = pairs_.find(pair);
    if (it == pairs_.end()) fail(ErrorCode::NoKeySourceForPair, pair.label());
    est = it->second.establisher.get();
  }
  est->establish(block_bits_, now);
  {
    std::lock_guard lock(mu_);
    ++establishments_;
  }
  // ek, ct and confirmation transfers plus keygen, encaps, decaps.
  SimDuration d = delay_(pair.second, pair.first) + delay_(pair.first, pair.second) + delay_(pair.second, pair.first);
  return d + from_ms(3 * kem_compute_ms_);
}

std::uint64_t KmsPqcPool::establishments() const {
  std::lock_guard lock(mu_);
  return establishments_;
}

// ---------------------------------------------------------------------------

SkipService::SkipService(keystore::KeyStore& store, SkipDeps deps, SkipConfig config)
    : store_(store), deps_(std::move(deps)), config_(std::move(config)) {
  if (!deps_.controller || !deps_.directory) fail(ErrorCode::InvalidDescriptor, "SKIP service needs a controller and a key-id directory");
  if (!deps_.path_delay) deps_.path_delay = [](const NodeId&, const NodeId&) { return SimDuration{0}; };
  if (config_.supported_ppk_octets.empty()) fail(ErrorCode::InvalidDescriptor, "no supported PPK lengths");
  for (auto n : config_.supported_ppk_octets)
    if (n < 16) fail(ErrorCode::InvalidDescriptor, "PPK lengths below 16 octets are not allowed");
}

void SkipService::register_client(const std::string& client_id, const std::string& psk_id, Bytes psk) {
  std::lock_guard lock(mu_);
  clients_[client_id] = {psk_id, std::move(psk)};
}

Bytes SkipService::challenge() {
  std::lock_guard lock(mu_);
  Bytes seed = to_bytes(identity());
  append_u64_be(seed, ++challenge_counter_);
  Bytes c = crypto::sha512(seed);
  c.resize(32);
  outstanding_challenges_.insert(c);
  return c;
}

SkipChannel SkipService::authenticate(const std::string& client_id, const std::string& psk_id, ByteView challenge,
                                      ByteView proof) {
  std::lock_guard lock(mu_);
  SkipChannel ch{client_id, psk_id, ChannelState::Rejected};
  Bytes c(challenge.begin(), challenge.end());
  // Each challenge is single-use.
  if (outstanding_challenges_.erase(c) == 0) return ch;
  auto it = clients_.find(client_id);
  if (it == clients_.end() || it->second.psk_id != psk_id) return ch;
  if (crypto::constant_time_equal(skip_auth_proof(it->second.psk, client_id, challenge), proof))
    ch.state = ChannelState::Authenticated;
  return ch;
}

void SkipService::require_auth(const SkipChannel& channel) const {
  std::lock_guard lock(mu_);
  if (channel.state != ChannelState::Authenticated) fail(ErrorCode::AuthFailure, "channel not authenticated");
  auto it = clients_.find(channel.client_id);
  if (it == clients_.end() || it->second.psk_id != channel.psk_id) fail(ErrorCode::AuthFailure, "unknown client " + channel.client_id);
}

Timed<SkipCapabilities> SkipService::get_capabilities(const SkipChannel& channel, SimTime) const {
  require_auth(channel);
  SkipCapabilities caps;
  caps.local_identity = identity();
  for (const auto& p : deps_.controller->peers_of(node())) caps.peer_identities.push_back(identity_for(p));
  caps.supported_ppk_lengths.assign(config_.supported_ppk_octets.begin(), config_.supported_ppk_octets.end());
  std::set<std::string> tech;
  for (const auto& src : store_.sources()) {
    if (store_.buffer_level(src).available_bits == 0) continue;
    if (src.rfind("pqc:", 0) == 0) tech.insert(std::string(keystore::to_string(keystore::Technology::PqcKem)));
    else if (src.rfind("relay:", 0) == 0) tech.insert(std::string(keystore::to_string(keystore::Technology::Relayed)));
    else {
      try {
        tech.insert(std::string(keystore::to_string(deps_.controller->link(src).link.technology)));
      } catch (const Error&) {
      }
    }
  }
  if (deps_.pqc) tech.insert(std::string(keystore::to_string(keystore::Technology::PqcKem)));
  caps.technologies.assign(tech.begin(), tech.end());
  return {std::move(caps), ms(config_.skip_local_call_ms)};
}

SimDuration SkipService::sync_rtt(const NodeId& peer) const {
  // The ppk_id claim travels key source -> controller -> peer key source
  // and is acknowledged along the same route.
  auto hub = deps_.controller->hub();
  const NodeId via = hub ? *hub : peer;
  const auto& d = deps_.path_delay;
  return d(node(), via) + d(via, peer) + d(peer, via) + d(via, node());
}

std::optional<Timed<PpkGrant>> SkipService::try_qkd(const NodeId& peer, const sdn::PathPlan& plan, std::size_t octets,
                                                     SimTime now) {
  const SimDuration base = ms(config_.skip_local_call_ms) + ms(config_.kms_processing_ms);
  auto& sync = deps_.controller->peer_sync();
  try {
    if (plan.kind == sdn::PathKind::DirectQkd) {
      const std::string& link = plan.links.front();
      SimDuration latency = base + sync_rtt(peer);
      DelayedSync delayed(sync, latency);
      etsi::Etsi014Config cfg;
      cfg.key_size_bits = octets * 8;
      cfg.max_key_size_bits = std::max<std::size_t>(cfg.max_key_size_bits, octets * 8);
      cfg.source_id = link;
      etsi::Etsi014Endpoint ep(store_, *deps_.directory, &delayed, cfg);
      auto keys = ep.get_key(peer, 1, octets * 8);
      auto& k = keys.keys.front();
      store_.consume(k.key_id);
      PpkGrant g{k.key, k.key_id, sdn::SourceKind::Qkd, plan.kind, sdn::SelectReason::QkdOk,
                 deps_.controller->link(link).link.technology, link, now + latency};
      return Timed<PpkGrant>{std::move(g), latency};
    }
    if (plan.kind == sdn::PathKind::RelayVia) {
      auto relayed = deps_.controller->relay_key(plan, std::max(config_.relay_key_bits, octets * 8), now);
      SimDuration extra{0};
      for (std::size_t i = 0; i + 1 < plan.nodes.size(); ++i)
        extra += deps_.path_delay(plan.nodes[i], plan.nodes[i + 1]) + ms(config_.relay_hop_ms);
      SimDuration latency = base + extra + sync_rtt(peer);
      auto rec = store_.reserve({peer, octets * 8, std::nullopt, relayed.origin});
      sync.claim(peer, rec.ppk_id, now + latency);
      store_.consume(rec.ppk_id);
      deps_.directory->record(rec.ppk_id, {node(), peer, octets * 8});
      PpkGrant g{rec.ppk, rec.ppk_id, sdn::SourceKind::Qkd, plan.kind, sdn::SelectReason::QkdOk,
                 keystore::Technology::Relayed, relayed.origin, now + latency};
      return Timed<PpkGrant>{std::move(g), latency};
    }
  } catch (const Error& e) {
    if (!falls_back(e)) throw;
  }
  return std::nullopt;
}

std::optional<Timed<PpkGrant>> SkipService::try_pqc(const NodeId& peer, std::size_t octets, SimTime now) {
  if (!deps_.pqc) return std::nullopt;
  NodePair pair(node(), peer);
  if (!deps_.controller->pqc_available(pair)) return std::nullopt;
  const std::string src = deps_.pqc->source_id(pair);
  try {
    SimDuration extra{0};
    if (store_.available_blocks(peer, src) == 0) extra = deps_.pqc->establish_now(pair, now);
    SimDuration latency = ms(config_.skip_local_call_ms) + ms(config_.kms_processing_ms) + extra + sync_rtt(peer);
    auto rec = store_.reserve({peer, octets * 8, std::nullopt, src});
    deps_.controller->peer_sync().claim(peer, rec.ppk_id, now + latency);
    store_.consume(rec.ppk_id);
    deps_.directory->record(rec.ppk_id, {node(), peer, octets * 8});
    PpkGrant g{rec.ppk, rec.ppk_id, sdn::SourceKind::Pqc, sdn::PathKind::PqcDirect, sdn::SelectReason::NoQkd,
               keystore::Technology::PqcKem, src, now + latency};
    return Timed<PpkGrant>{std::move(g), latency};
  } catch (const Error& e) {
    if (!falls_back(e)) throw;
  }
  return std::nullopt;
}

Timed<PpkGrant> SkipService::get_key(const SkipChannel& channel, const NodeId& peer, std::size_t ppk_octets, SimTime now) {
  require_auth(channel);
  if (!config_.supported_ppk_octets.count(ppk_octets))
    fail(ErrorCode::BadLength, "unsupported PPK length " + std::to_string(ppk_octets));
  if (peer == node() || !deps_.controller->node(peer)) fail(ErrorCode::UnknownPeer, peer.value);

  NodePair pair(node(), peer);
  auto decision = deps_.controller->select_source(pair, now);
  auto qkd = [&]() -> std::optional<Timed<PpkGrant>> {
    try {
      sdn::Policy qkd_only = deps_.controller->policy();
      qkd_only.source_preference = {sdn::SourceKind::Qkd};
      return try_qkd(peer, deps_.controller->compute_key_path(node(), peer, qkd_only), ppk_octets, now);
    } catch (const Error& e) {
      if (!falls_back(e)) throw;
      return std::nullopt;
    }
  };
  auto pqc = [&] { return deps_.controller->policy().allows(sdn::SourceKind::Pqc) ? try_pqc(peer, ppk_octets, now) : std::nullopt; };

  std::optional<Timed<PpkGrant>> got;
  if (decision.source == sdn::SourceKind::Qkd) {
    got = qkd();
    if (!got) got = pqc();
  } else {
    got = pqc();
    if (!got && deps_.controller->policy().allows(sdn::SourceKind::Qkd)) got = qkd();
  }
  if (!got) fail(ErrorCode::NoKeyAvailable, "no key source can serve " + pair.label());
  if (got->value.source == decision.source) got->value.reason = decision.reason;
  std::lock_guard lock(mu_);
  ++grants_;
  return std::move(*got);
}

Timed<Bytes> SkipService::get_key_by_id(const SkipChannel& channel, const KeyId& ppk_id, SimTime now) {
  require_auth(channel);
  auto st = store_.state_of(ppk_id);
  auto issued = deps_.directory->lookup(ppk_id);
  if (!st || !issued || issued->target != node() || *st == keystore::KeyState::Available)
    fail(ErrorCode::UnknownPpkId, ppk_id.hex());
  if (*st == keystore::KeyState::Consumed) fail(ErrorCode::KeyAlreadyConsumed, ppk_id.hex());
  if (*st == keystore::KeyState::Expired) fail(ErrorCode::KeyExpired, ppk_id.hex());

  SimDuration latency = ms(config_.skip_local_call_ms) + ms(config_.kms_processing_ms);
  if (auto synced = store_.synced_at(ppk_id); synced && *synced > now + latency) {
    SimDuration wait = *synced - (now + latency);
    if (wait > ms(config_.sync_timeout_ms)) fail(ErrorCode::SyncTimeout, ppk_id.hex());
    latency += wait;
  }
  etsi::Etsi014Endpoint ep(store_, *deps_.directory, nullptr,
                           etsi::Etsi014Config{issued->size_bits, 8, std::max<std::size_t>(1024, issued->size_bits), 128, std::nullopt});
  auto keys = ep.get_key_with_ids(issued->issuer, {ppk_id});
  return {std::move(keys.keys.front().key), latency};
}

std::uint64_t SkipService::grants() const {
  std::lock_guard lock(mu_);
  return grants_;
}

json SkipService::handle(const SkipChannel& channel, const json& request) {
  json resp{{"schema_version", kSkipSchemaVersion}};
  try {
    const std::string op = request.at("operation").get<std::string>();
    resp["operation"] = op;
    SimTime now{request.value("now_us", std::int64_t{0})};
    if (op == "get_capabilities") {
      auto r = get_capabilities(channel, now);
      resp["capabilities"] = r.value.to_json();
      resp["latency_us"] = r.latency.count();
    } else if (op == "get_key") {
      auto r = get_key(channel, request.at("peer_id").get<std::string>(),
                       request.value("ppk_len", keystore::kDefaultPpkOctets), now);
      resp["ppk"] = to_base64(r.value.ppk);
      resp["ppk_id"] = r.value.ppk_id.hex();
      resp["source"] = std::string(sdn::to_string(r.value.source));
      resp["path"] = std::string(sdn::to_string(r.value.path));
      resp["latency_us"] = r.latency.count();
    } else if (op == "get_key_by_id") {
      auto r = get_key_by_id(channel, KeyId::from_hex(request.at("ppk_id").get<std::string>()), now);
      resp["ppk"] = to_base64(r.value);
      resp["ppk_id"] = request.at("ppk_id");
      resp["latency_us"] = r.latency.count();
    } else {
      fail(ErrorCode::SchemaError, "unknown operation " + op);
    }
    resp["status"] = static_cast<int>(SkipStatus::Ok);
  } catch (const Error& e) {
    resp["status"] = static_cast<int>(skip_status_for(e.code()));
    resp["error"] = std::string(to_string(e.code()));
    resp["message"] = e.what();
  } catch (const json::exception& e) {
    resp["status"] = static_cast<int>(SkipStatus::BadRequest);
    resp["error"] = "SchemaError";
    resp["message"] = e.what();
  }
  return resp;
}

// ---------------------------------------------------------------------------

SkipClient::SkipClient(SkipService& service, std::string client_id, std::string psk_id, Bytes psk)
    : service_(service), client_id_(std::move(client_id)), psk_id_(std::move(psk_id)), psk_(std::move(psk)) {}

const SkipChannel& SkipClient::connect() {
  Bytes c = service_.challenge();
  channel_ = service_.authenticate(client_id_, psk_id_, c, skip_auth_proof(psk_, client_id_, c));
  return channel_;
}

}  // namespace qsvpn::skip
