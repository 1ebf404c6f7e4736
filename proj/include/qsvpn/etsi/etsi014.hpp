#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "qsvpn/etsi/wire.hpp"
#include "qsvpn/keystore/keystore.hpp"

namespace qsvpn::etsi {

struct IssuedKey {
  NodeId issuer;  // SAE that obtained the key through get_key
  NodeId target;  // SAE allowed to retrieve it by id
  std::size_t size_bits = 0;
};

/// Key-id metadata shared by the KMEs of a deployment (which SAE drew a key,
/// for whom, and at what size). Thread-safe.
class KeyIdDirectory {
 public:
  void record(const KeyId& id, IssuedKey entry);
  std::optional<IssuedKey> lookup(const KeyId& id) const;

 private:
  mutable std::mutex mu_;
  std::map<KeyId, IssuedKey> entries_;
};

struct Etsi014Config {
  std::size_t key_size_bits = 256;  // default size reported by status
  std::size_t min_key_size_bits = 8;
  std::size_t max_key_size_bits = 1024;
  std::size_t max_key_per_request = 128;
  std::optional<std::string> source_id;  // restrict draws to one key source
};

struct Etsi014Status {
  NodeId source_sae;
  NodeId target_sae;
  std::size_t key_size = 0;
  std::size_t stored_key_count = 0;
  std::size_t max_key_per_request = 0;
  std::size_t max_key_size = 0;
  std::size_t min_key_size = 0;

  json to_json() const;
  static Etsi014Status from_json(const json& j);
};

struct DeliveredKey {
  KeyId key_id;
  Bytes key;
};

struct Etsi014KeyContainer {
  std::vector<DeliveredKey> keys;

  // {"keys": [{"key_ID": "<32 hex>", "key": "<base64>"}]}
  json to_json() const;
  static Etsi014KeyContainer from_json(const json& j);
};

/// Get-status / get-key / get-key-with-ids over one node's key store.
class Etsi014Endpoint {
 public:
  // `sync` mirrors reservations into the peer store so the same block is
  // never handed out twice across the pair.
  Etsi014Endpoint(keystore::KeyStore& store, KeyIdDirectory& directory, keystore::PeerSync* sync = nullptr,
                  Etsi014Config config = {});

  const NodeId& sae() const noexcept { return store_.owner(); }
  const Etsi014Config& config() const noexcept { return config_; }

  Etsi014Status status(const NodeId& peer) const;
  Etsi014KeyContainer get_key(const NodeId& peer, std::size_t number, std::size_t size_bits);
  Etsi014KeyContainer get_key_with_ids(const NodeId& peer, const std::vector<KeyId>& ids);

  // GET  /api/v1/keys/{peer}/status
  // POST /api/v1/keys/{peer}/enc_keys  {"number": n, "size": bits}
  // POST /api/v1/keys/{peer}/dec_keys  {"key_IDs": [{"key_ID": id}, ...]}
  WireResponse handle(const WireRequest& request);

 private:
  void check_peer(const NodeId& peer) const;

  keystore::KeyStore& store_;
  KeyIdDirectory& directory_;
  keystore::PeerSync* sync_;
  Etsi014Config config_;
};

/// Typed client over any WireTransport (in-process or HTTP).
class Etsi014Client {
 public:
  Etsi014Client(NodeId caller, WireTransport transport) : caller_(std::move(caller)), transport_(std::move(transport)) {}

  Etsi014Status status(const NodeId& peer) const;
  Etsi014KeyContainer get_key(const NodeId& peer, std::size_t number, std::size_t size_bits) const;
  Etsi014KeyContainer get_key_with_ids(const NodeId& peer, const std::vector<KeyId>& ids) const;

 private:
  WireResponse call(std::string method, std::string path, json body) const;

  NodeId caller_;
  WireTransport transport_;
};

}  // namespace qsvpn::etsi
