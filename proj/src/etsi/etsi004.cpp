#include "qsvpn/etsi/etsi004.hpp"

#include "qsvpn/common/crypto.hpp"

namespace qsvpn::etsi {

namespace {

// Chunks larger than this are assembled from several blocks.
constexpr std::size_t kPieceBits = 256;

std::string make_ksid(const NodeId& source, const NodeId& destination, std::uint64_t n) {
  Bytes seed = to_bytes(std::string("ksid") + '\0' + source.value + '\0' + destination.value);
  append_u64_be(seed, n);
  std::string h = to_hex(ByteView(crypto::sha512(seed)).first(16));
  return h.substr(0, 8) + '-' + h.substr(8, 4) + '-' + h.substr(12, 4) + '-' + h.substr(16, 4) + '-' + h.substr(20);
}

}  // namespace

std::string_view to_string(SessionState s) noexcept { return s == SessionState::Open ? "OPEN" : "CLOSED"; }

void Etsi004Service::attach(keystore::KeyStore& store) {
  std::lock_guard lock(mu_);
  stores_[store.owner()] = &store;
}

void Etsi004Service::set_key_source_probe(KeySourceProbe probe) {
  std::lock_guard lock(mu_);
  probe_ = std::move(probe);
}

keystore::KeyStore& Etsi004Service::store_of(const NodeId& node) const {
  auto it = stores_.find(node);
  if (it == stores_.end()) fail(ErrorCode::UnknownPeer, node.value + " has no attached key store");
  return *it->second;
}

Etsi004Service::Entry& Etsi004Service::entry(const std::string& ksid) {
  auto it = sessions_.find(ksid);
  if (it == sessions_.end()) fail(ErrorCode::UnknownSession, ksid);
  return it->second;
}

std::string Etsi004Service::open_connect(const NodeId& source, const NodeId& destination, std::size_t chunk_size_bits) {
  if (chunk_size_bits == 0 || chunk_size_bits % 8 != 0) fail(ErrorCode::BadSize, "chunk size must be a positive multiple of 8");
  std::lock_guard lock(mu_);
  if (source == destination) fail(ErrorCode::NoKeySourceForPair, "source and destination coincide");
  auto& src = store_of(source);
  store_of(destination);
  bool has_source = !src.sources_for(destination).empty() || (probe_ && probe_(source, destination));
  if (!has_source) fail(ErrorCode::NoKeySourceForPair, source.value + " -> " + destination.value);

  Entry e;
  e.info = {make_ksid(source, destination, next_session_++), source, destination, chunk_size_bits, SessionState::Open};
  e.next_index[source] = 0;
  e.next_index[destination] = 0;
  std::string ksid = e.info.ksid;
  sessions_.emplace(ksid, std::move(e));
  return ksid;
}

Bytes Etsi004Service::get_key(const std::string& ksid, const NodeId& caller, std::uint64_t index) {
  std::lock_guard lock(mu_);
  Entry& e = entry(ksid);
  if (e.info.state == SessionState::Closed) fail(ErrorCode::ClosedSession, ksid);
  auto next = e.next_index.find(caller);
  if (next == e.next_index.end()) fail(ErrorCode::UnknownPeer, caller.value + " is not an end of " + ksid);
  if (index != next->second)
    fail(ErrorCode::OutOfOrderIndex, "expected " + std::to_string(next->second) + ", got " + std::to_string(index));

  const NodeId& other = caller == e.info.source ? e.info.destination : e.info.source;
  auto& mine = store_of(caller);
  Bytes out;
  auto pending = e.pending.find(index);
  if (pending == e.pending.end()) {
    // First side to ask draws the chunk and marks it at the peer.
    auto& theirs = store_of(other);
    Chunk chunk{caller, {}};
    try {
      for (std::size_t left = e.info.chunk_size_bits; left > 0;) {
        std::size_t bits = std::min(left, kPieceBits);
        auto rec = mine.reserve({other, bits});
        chunk.pieces.push_back({rec.ppk_id, bits});
        theirs.claim(rec.ppk_id, mine.now());
        mine.consume(rec.ppk_id);
        out.insert(out.end(), rec.ppk.begin(), rec.ppk.end());
        left -= bits;
      }
    } catch (...) {
      for (const auto& p : chunk.pieces) {
        mine.discard(p.id);
        theirs.discard(p.id);
      }
      throw;
    }
    e.pending.emplace(index, std::move(chunk));
  } else {
    for (const auto& p : pending->second.pieces) {
      auto rec = mine.fetch_by_id(p.id);
      out.insert(out.end(), rec.ppk.begin(), rec.ppk.begin() + static_cast<std::ptrdiff_t>(p.bits / 8));
    }
    e.pending.erase(pending);
  }
  ++next->second;
  return out;
}

void Etsi004Service::close(const std::string& ksid) {
  std::lock_guard lock(mu_);
  Entry& e = entry(ksid);
  if (e.info.state == SessionState::Closed) return;
  for (const auto& [index, chunk] : e.pending) {
    for (const auto& p : chunk.pieces) {
      store_of(e.info.source).discard(p.id);
      store_of(e.info.destination).discard(p.id);
    }
  }
  e.pending.clear();
  e.info.state = SessionState::Closed;
}

Etsi004Session Etsi004Service::session(const std::string& ksid) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(ksid);
  if (it == sessions_.end()) fail(ErrorCode::UnknownSession, ksid);
  return it->second.info;
}

WireResponse Etsi004Service::handle(const WireRequest& request) {
  try {
    if (request.method != "POST") fail(ErrorCode::SchemaError, "key stream operations expect POST");
    const json& b = request.body;
    if (request.path == "/api/v1/ksid/open_connect") {
      NodeId source = b.at("source").get<std::string>();
      NodeId destination = b.at("destination").get<std::string>();
      if (request.caller != source && request.caller != destination)
        fail(ErrorCode::AuthFailure, request.caller.value + " is not an end of the stream");
      // Other QoS fields are accepted and ignored.
      std::size_t chunk = b.at("qos").at("key_chunk_size").get<std::size_t>();
      std::string ksid = open_connect(source, destination, chunk);
      return {200, json{{"status", 0}, {"key_stream_id", ksid}, {"qos", {{"key_chunk_size", chunk}}},
                        {"schema_version", kWireSchemaVersion}}};
    }
    if (request.path == "/api/v1/ksid/get_key") {
      std::string ksid = b.at("key_stream_id").get<std::string>();
      std::uint64_t index = b.at("index").get<std::uint64_t>();
      Bytes key = get_key(ksid, request.caller, index);
      return {200, json{{"status", 0}, {"index", index}, {"key_buffer", to_base64(key)},
                        {"schema_version", kWireSchemaVersion}}};
    }
    if (request.path == "/api/v1/ksid/close") {
      close(b.at("key_stream_id").get<std::string>());
      return {200, json{{"status", 0}, {"schema_version", kWireSchemaVersion}}};
    }
    fail(ErrorCode::SchemaError, "no route " + request.path);
  } catch (const Error& e) {
    return error_response(e);
  } catch (const json::exception& e) {
    return error_response(Error(ErrorCode::SchemaError, e.what()));
  }
}

}  // namespace qsvpn::etsi
