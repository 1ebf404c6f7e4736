#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "qsvpn/etsi/wire.hpp"
#include "qsvpn/keystore/keystore.hpp"

namespace qsvpn::etsi {

enum class SessionState { Open, Closed };
std::string_view to_string(SessionState s) noexcept;

struct Etsi004Session {
  std::string ksid;
  NodeId source;
  NodeId destination;
  std::size_t chunk_size_bits = 0;
  SessionState state = SessionState::Open;
};

/// Stream-oriented key delivery between two SAEs whose key stores are both
/// attached to this service. For each index, whichever side asks first
/// draws the chunk from its store and marks it at the peer; the other side
/// then retrieves the same blocks by id.
class Etsi004Service {
 public:
  // Optional extra test for "the pair has a key source" (e.g. a relay path
  // known to the controller) beyond material already in the source's store.
  using KeySourceProbe = std::function<bool(const NodeId& source, const NodeId& destination)>;

  void attach(keystore::KeyStore& store);
  void set_key_source_probe(KeySourceProbe probe);

  std::string open_connect(const NodeId& source, const NodeId& destination, std::size_t chunk_size_bits);
  Bytes get_key(const std::string& ksid, const NodeId& caller, std::uint64_t index);
  void close(const std::string& ksid);

  Etsi004Session session(const std::string& ksid) const;

  // POST /api/v1/ksid/open_connect {"source", "destination", "qos": {"key_chunk_size": bits, ...}}
  // POST /api/v1/ksid/get_key      {"key_stream_id", "index"}
  // POST /api/v1/ksid/close        {"key_stream_id"}
  WireResponse handle(const WireRequest& request);

 private:
  struct Piece {
    KeyId id;
    std::size_t bits;
  };
  struct Chunk {
    NodeId drawer;
    std::vector<Piece> pieces;
  };
  struct Entry {
    Etsi004Session info;
    std::map<NodeId, std::uint64_t> next_index;
    std::map<std::uint64_t, Chunk> pending;  // drawn by one side, not yet by the other
  };

  keystore::KeyStore& store_of(const NodeId& node) const;
  Entry& entry(const std::string& ksid);

  mutable std::mutex mu_;
  std::map<NodeId, keystore::KeyStore*> stores_;
  KeySourceProbe probe_;
  std::map<std::string, Entry> sessions_;
  std::uint64_t next_session_ = 1;
};

}  // namespace qsvpn::etsi
