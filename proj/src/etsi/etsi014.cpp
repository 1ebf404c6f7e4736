#include "qsvpn/etsi/etsi014.hpp"

#include <regex>

namespace qsvpn::etsi {

void KeyIdDirectory::record(const KeyId& id, IssuedKey entry) {
  std::lock_guard lock(mu_);
  entries_[id] = std::move(entry);
}

std::optional<IssuedKey> KeyIdDirectory::lookup(const KeyId& id) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(id);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

json Etsi014Status::to_json() const {
  return json{{"source_KME_ID", source_sae.value},
              {"target_KME_ID", target_sae.value},
              {"master_SAE_ID", source_sae.value},
              {"slave_SAE_ID", target_sae.value},
              {"key_size", key_size},
              {"stored_key_count", stored_key_count},
              {"max_key_per_request", max_key_per_request},
              {"max_key_size", max_key_size},
              {"min_key_size", min_key_size},
              {"schema_version", kWireSchemaVersion}};
}

Etsi014Status Etsi014Status::from_json(const json& j) {
  try {
    Etsi014Status s;
    s.source_sae = j.at("master_SAE_ID").get<std::string>();
    s.target_sae = j.at("slave_SAE_ID").get<std::string>();
    s.key_size = j.at("key_size").get<std::size_t>();
    s.stored_key_count = j.at("stored_key_count").get<std::size_t>();
    s.max_key_per_request = j.at("max_key_per_request").get<std::size_t>();
    s.max_key_size = j.at("max_key_size").get<std::size_t>();
    s.min_key_size = j.at("min_key_size").get<std::size_t>();
    return s;
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaError, std::string("status record: ") + e.what());
  }
}

json Etsi014KeyContainer::to_json() const {
  json arr = json::array();
  for (const auto& k : keys) arr.push_back({{"key_ID", k.key_id.hex()}, {"key", to_base64(k.key)}});
  return json{{"keys", arr}, {"schema_version", kWireSchemaVersion}};
}

Etsi014KeyContainer Etsi014KeyContainer::from_json(const json& j) {
  Etsi014KeyContainer c;
  try {
    for (const auto& k : j.at("keys"))
      c.keys.push_back({KeyId::from_hex(k.at("key_ID").get<std::string>()), from_base64(k.at("key").get<std::string>())});
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaError, std::string("key container: ") + e.what());
  }
  return c;
}

Etsi014Endpoint::Etsi014Endpoint(keystore::KeyStore& store, KeyIdDirectory& directory, keystore::PeerSync* sync,
                                 Etsi014Config config)
    : store_(store), directory_(directory), sync_(sync), config_(std::move(config)) {}

void Etsi014Endpoint::check_peer(const NodeId& peer) const {
  if (peer == sae() || !store_.knows_peer(peer)) fail(ErrorCode::UnknownPeer, peer.value);
}

Etsi014Status Etsi014Endpoint::status(const NodeId& peer) const {
  check_peer(peer);
  Etsi014Status s;
  s.source_sae = sae();
  s.target_sae = peer;
  s.key_size = config_.key_size_bits;
  s.stored_key_count = store_.available_blocks(peer, config_.source_id);
  s.max_key_per_request = config_.max_key_per_request;
  s.max_key_size = config_.max_key_size_bits;
  s.min_key_size = config_.min_key_size_bits;
  return s;
}

Etsi014KeyContainer Etsi014Endpoint::get_key(const NodeId& peer, std::size_t number, std::size_t size_bits) {
  check_peer(peer);
  if (size_bits == 0 || size_bits % 8 != 0) fail(ErrorCode::BadSize, "size must be a positive multiple of 8");
  if (size_bits < config_.min_key_size_bits || size_bits > config_.max_key_size_bits)
    fail(ErrorCode::BadSize, "size outside [" + std::to_string(config_.min_key_size_bits) + ", " +
                                 std::to_string(config_.max_key_size_bits) + "]");
  if (number == 0 || number > config_.max_key_per_request) fail(ErrorCode::BadSize, "number out of range");
  if (store_.available_blocks(peer, config_.source_id) < number)
    fail(ErrorCode::InsufficientKeyMaterial, std::to_string(number) + " keys requested for " + peer.value);

  Etsi014KeyContainer out;
  try {
    for (std::size_t i = 0; i < number; ++i) {
      auto rec = store_.reserve({peer, size_bits, std::nullopt, config_.source_id});
      out.keys.push_back({rec.ppk_id, std::move(rec.ppk)});
      if (sync_) sync_->claim(peer, rec.ppk_id, store_.now());
    }
  } catch (...) {
    // All-or-nothing: give back nothing, destroy what was drawn.
    for (const auto& k : out.keys) {
      store_.discard(k.key_id);
      if (sync_) sync_->discard(peer, k.key_id);
    }
    throw;
  }
  for (const auto& k : out.keys) directory_.record(k.key_id, {sae(), peer, size_bits});
  return out;
}

Etsi014KeyContainer Etsi014Endpoint::get_key_with_ids(const NodeId& peer, const std::vector<KeyId>& ids) {
  check_peer(peer);
  std::vector<IssuedKey> meta;
  for (const auto& id : ids) {
    auto m = directory_.lookup(id);
    if (!m || m->issuer != peer || m->target != sae()) fail(ErrorCode::UnknownPpkId, id.hex());
    auto st = store_.state_of(id);
    if (!st) fail(ErrorCode::UnknownPpkId, id.hex());
    if (*st == keystore::KeyState::Consumed) fail(ErrorCode::KeyAlreadyConsumed, id.hex());
    if (*st == keystore::KeyState::Expired) fail(ErrorCode::KeyExpired, id.hex());
    meta.push_back(*m);
  }
  Etsi014KeyContainer out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto rec = store_.fetch_by_id(ids[i]);
    rec.ppk.resize(meta[i].size_bits / 8);
    out.keys.push_back({ids[i], std::move(rec.ppk)});
  }
  return out;
}

WireResponse Etsi014Endpoint::handle(const WireRequest& request) {
  static const std::regex route(R"(^/api/v1/keys/([^/]+)/(status|enc_keys|dec_keys)$)");
  try {
    if (request.caller != sae()) fail(ErrorCode::AuthFailure, "endpoint serves " + sae().value);
    std::smatch m;
    if (!std::regex_match(request.path, m, route)) fail(ErrorCode::SchemaError, "no route " + request.path);
    NodeId peer = m[1].str();
    const std::string op = m[2].str();
    const json& body = request.body;
    if (op == "status") {
      if (request.method != "GET") fail(ErrorCode::SchemaError, "status expects GET");
      return {200, status(peer).to_json()};
    }
    if (request.method != "POST") fail(ErrorCode::SchemaError, op + " expects POST");
    if (op == "enc_keys") {
      std::size_t number = body.value("number", std::size_t{1});
      std::size_t size = body.value("size", config_.key_size_bits);
      return {200, get_key(peer, number, size).to_json()};
    }
    std::vector<KeyId> ids;
    for (const auto& k : body.at("key_IDs")) ids.push_back(KeyId::from_hex(k.at("key_ID").get<std::string>()));
    return {200, get_key_with_ids(peer, ids).to_json()};
  } catch (const Error& e) {
    return error_response(e);
  } catch (const json::exception& e) {
    return error_response(Error(ErrorCode::SchemaError, e.what()));
  }
}

WireResponse Etsi014Client::call(std::string method, std::string path, json body) const {
  WireResponse r = transport_({std::move(method), std::move(path), caller_, std::move(body)});
  raise_if_error(r);
  return r;
}

Etsi014Status Etsi014Client::status(const NodeId& peer) const {
  return Etsi014Status::from_json(call("GET", "/api/v1/keys/" + peer.value + "/status", json::object()).body);
}

Etsi014KeyContainer Etsi014Client::get_key(const NodeId& peer, std::size_t number, std::size_t size_bits) const {
  auto r = call("POST", "/api/v1/keys/" + peer.value + "/enc_keys", json{{"number", number}, {"size", size_bits}});
  return Etsi014KeyContainer::from_json(r.body);
}

Etsi014KeyContainer Etsi014Client::get_key_with_ids(const NodeId& peer, const std::vector<KeyId>& ids) const {
  json arr = json::array();
  for (const auto& id : ids) arr.push_back({{"key_ID", id.hex()}});
  auto r = call("POST", "/api/v1/keys/" + peer.value + "/dec_keys", json{{"key_IDs", arr}});
  return Etsi014KeyContainer::from_json(r.body);
}

}  // namespace qsvpn::etsi
