#include "qsvpn/keystore/keystore.hpp"

#include <algorithm>
#include <tuple>

#include "qsvpn/common/error.hpp"

namespace qsvpn::keystore {

std::string_view to_string(Technology t) noexcept {
  switch (t) {
    case Technology::DvQkd: return "DV_QKD";
    case Technology::CvQkd: return "CV_QKD";
    case Technology::PqcKem: return "PQC_KEM";
    case Technology::Relayed: return "RELAYED";
  }
  return "?";
}

std::string_view to_string(KeyState s) noexcept {
  switch (s) {
    case KeyState::Available: return "AVAILABLE";
    case KeyState::Reserved: return "RESERVED";
    case KeyState::Consumed: return "CONSUMED";
    case KeyState::Expired: return "EXPIRED";
  }
  return "?";
}

Technology technology_from_string(std::string_view s) {
  if (s == "DV_QKD") return Technology::DvQkd;
  if (s == "CV_QKD") return Technology::CvQkd;
  if (s == "PQC_KEM") return Technology::PqcKem;
  if (s == "RELAYED") return Technology::Relayed;
  fail(ErrorCode::SchemaError, "unknown technology '" + std::string(s) + "'");
}

bool is_qkd(Technology t) noexcept { return t == Technology::DvQkd || t == Technology::CvQkd; }

KeyStore::KeyStore(NodeId owner, ClockFn clock) : owner_(std::move(owner)), clock_(std::move(clock)) {}

void KeyStore::add_peer(const NodeId& peer) {
  std::lock_guard lock(mu_);
  peers_.insert(peer);
}

bool KeyStore::knows_peer(const NodeId& peer) const {
  std::lock_guard lock(mu_);
  if (peers_.count(peer) != 0) return true;
  return std::any_of(index_.begin(), index_.end(), [&](const auto& kv) { return kv.second.peer == peer; });
}

SimTime KeyStore::now() const { return clock_ ? clock_() : SimTime{0}; }

KeyHandle KeyStore::ingest(KeyBlock block) {
  if (block.bytes.empty()) fail(ErrorCode::MalformedBlock, "empty key material");
  if (block.expires_at <= block.created_at) fail(ErrorCode::MalformedBlock, "expires_at must follow created_at");
  if (block.peer == owner_) fail(ErrorCode::MalformedBlock, "block peer is the owning node");
  std::lock_guard lock(mu_);
  if (issued_.count(block.key_id) != 0) fail(ErrorCode::DuplicateKeyId, block.key_id.hex());
  auto idx = index_.find(block.origin);
  if (idx == index_.end()) {
    idx = index_.emplace(block.origin, SourceIndex{block.peer, {}}).first;
  } else if (idx->second.peer != block.peer) {
    fail(ErrorCode::MalformedBlock, "source " + block.origin + " already bound to another peer");
  }
  block.state = KeyState::Available;
  auto& acct = accounts_[block.origin];
  acct.available += block.bits();
  acct.available_blocks += 1;
  issued_.insert(block.key_id);
  idx->second.available.emplace(block.created_at, block.key_id);
  live_by_expiry_.emplace(block.expires_at, block.key_id);
  KeyHandle handle{block.key_id, block.origin};
  blocks_.emplace(handle.key_id, Entry{std::move(block), std::nullopt});
  return handle;
}

void KeyStore::transition(Entry& e, KeyState to) {
  KeyState from = e.block.state;
  if (from == to) return;
  bool allowed = (from == KeyState::Available && to == KeyState::Reserved) ||
                 (from == KeyState::Reserved && to == KeyState::Consumed) ||
                 (from == KeyState::Available && to == KeyState::Consumed) ||
                 ((from == KeyState::Available || from == KeyState::Reserved) && to == KeyState::Expired);
  if (!allowed) {
    fail(ErrorCode::KeyAlreadyConsumed, std::string("illegal transition ") + std::string(to_string(from)) + " -> " +
                                            std::string(to_string(to)));
  }
  auto& acct = accounts_[e.block.origin];
  const std::uint64_t bits = e.block.bits();
  switch (from) {
    case KeyState::Available:
      acct.available -= bits;
      acct.available_blocks -= 1;
      index_[e.block.origin].available.erase({e.block.created_at, e.block.key_id});
      break;
    case KeyState::Reserved:
      acct.reserved -= bits;
      reserved_.erase(e.block.key_id);
      break;
    default: break;
  }
  switch (to) {
    case KeyState::Reserved:
      acct.reserved += bits;
      reserved_.insert(e.block.key_id);
      break;
    case KeyState::Consumed: acct.consumed += bits; break;
    case KeyState::Expired: acct.expired += bits; break;
    default: break;
  }
  if (to == KeyState::Consumed || to == KeyState::Expired) live_by_expiry_.erase({e.block.expires_at, e.block.key_id});
  e.block.state = to;
  if (to == KeyState::Consumed || to == KeyState::Expired) {
    // Terminal: scrub the material, keep only the length for accounting.
    std::fill(e.block.bytes.begin(), e.block.bytes.end(), std::uint8_t{0});
  }
}

bool KeyStore::is_live_expired(const Entry& e, SimTime now) const {
  return (e.block.state == KeyState::Available || e.block.state == KeyState::Reserved) && e.block.expires_at <= now;
}

PpkRecord KeyStore::to_record(const Entry& e, std::size_t bits) const {
  PpkRecord r;
  r.ppk_id = e.block.key_id;
  r.ppk.assign(e.block.bytes.begin(), e.block.bytes.begin() + static_cast<std::ptrdiff_t>(bits / 8));
  r.pair = NodePair(owner_, e.block.peer);
  r.expires_at = e.block.expires_at;
  r.technology = e.block.technology;
  r.origin = e.block.origin;
  return r;
}

void KeyStore::check_peer(const NodeId& peer) const {
  if (peer == owner_) fail(ErrorCode::NoSuchPair, "pair with self");
  if (peers_.empty() || peers_.count(peer) != 0) return;
  bool holds = std::any_of(index_.begin(), index_.end(), [&](const auto& kv) { return kv.second.peer == peer; });
  if (!holds) fail(ErrorCode::NoSuchPair, peer.value);
}

PpkRecord KeyStore::reserve(const ReserveSelector& selector) {
  if (selector.min_bits == 0 || selector.min_bits % 8 != 0) fail(ErrorCode::BadSize, "reserve size must be whole octets");
  std::lock_guard lock(mu_);
  check_peer(selector.peer);
  const SimTime t = now();
  Entry* best = nullptr;
  bool best_preferred = false;
  for (auto& [source, idx] : index_) {
    if (idx.peer != selector.peer) continue;
    if (selector.source_id && source != *selector.source_id) continue;
    // Oldest usable block of this source.
    Entry* head = nullptr;
    for (auto it = idx.available.begin(); it != idx.available.end();) {
      Entry& e = blocks_.at(it->second);
      ++it;  // transition() may erase the current element
      if (is_live_expired(e, t)) {
        transition(e, KeyState::Expired);
        continue;
      }
      if (e.block.bits() < selector.min_bits) continue;
      head = &e;
      break;
    }
    if (head == nullptr) continue;
    bool preferred = selector.preferred && head->block.technology == *selector.preferred;
    auto older = [](const Entry& a, const Entry& b) {
      return std::tie(a.block.created_at, a.block.key_id) < std::tie(b.block.created_at, b.block.key_id);
    };
    if (best == nullptr || (preferred && !best_preferred) ||
        (preferred == best_preferred && older(*head, *best))) {
      best = head;
      best_preferred = preferred;
    }
  }
  if (best == nullptr) {
    fail(ErrorCode::InsufficientKeyMaterial, "no available block for " + selector.peer.value +
                                                 (selector.source_id ? " from " + *selector.source_id : ""));
  }
  transition(*best, KeyState::Reserved);
  return to_record(*best, selector.min_bits);
}

void KeyStore::claim(const KeyId& id, SimTime synced_at) {
  std::lock_guard lock(mu_);
  auto it = blocks_.find(id);
  if (it == blocks_.end()) fail(ErrorCode::UnknownPpkId, id.hex());
  auto& e = it->second;
  if (e.block.state == KeyState::Consumed) fail(ErrorCode::KeyAlreadyConsumed, id.hex());
  if (e.block.state == KeyState::Expired) fail(ErrorCode::KeyExpired, id.hex());
  if (e.block.state == KeyState::Reserved) fail(ErrorCode::KeyAlreadyConsumed, "already reserved: " + id.hex());
  transition(e, KeyState::Reserved);
  e.synced_at = synced_at;
}

std::optional<SimTime> KeyStore::synced_at(const KeyId& id) const {
  std::lock_guard lock(mu_);
  auto it = blocks_.find(id);
  if (it == blocks_.end()) return std::nullopt;
  return it->second.synced_at;
}

PpkRecord KeyStore::fetch_by_id(const KeyId& id) {
  std::lock_guard lock(mu_);
  auto it = blocks_.find(id);
  if (it == blocks_.end()) fail(ErrorCode::UnknownPpkId, id.hex());
  auto& e = it->second;
  if (e.block.state == KeyState::Consumed) fail(ErrorCode::KeyAlreadyConsumed, id.hex());
  if (e.block.state == KeyState::Expired) fail(ErrorCode::KeyExpired, id.hex());
  if (is_live_expired(e, now())) {
    transition(e, KeyState::Expired);
    fail(ErrorCode::KeyExpired, id.hex());
  }
  PpkRecord r = to_record(e, e.block.bits());
  transition(e, KeyState::Consumed);
  return r;
}

void KeyStore::consume(const KeyId& id) {
  std::lock_guard lock(mu_);
  auto it = blocks_.find(id);
  if (it == blocks_.end()) fail(ErrorCode::UnknownPpkId, id.hex());
  auto& e = it->second;
  if (e.block.state == KeyState::Consumed) fail(ErrorCode::KeyAlreadyConsumed, id.hex());
  if (e.block.state == KeyState::Expired) fail(ErrorCode::KeyExpired, id.hex());
  transition(e, KeyState::Consumed);
}

void KeyStore::discard(const KeyId& id) {
  std::lock_guard lock(mu_);
  auto it = blocks_.find(id);
  if (it == blocks_.end()) fail(ErrorCode::UnknownPpkId, id.hex());
  auto& e = it->second;
  if (e.block.state == KeyState::Available || e.block.state == KeyState::Reserved) transition(e, KeyState::Expired);
}

std::size_t KeyStore::expire_sweep(SimTime now) {
  std::lock_guard lock(mu_);
  std::vector<KeyId> due;
  for (auto it = live_by_expiry_.begin(); it != live_by_expiry_.end() && it->first <= now; ++it) due.push_back(it->second);
  for (const auto& id : due) transition(blocks_.at(id), KeyState::Expired);
  return due.size();
}

BufferStats KeyStore::buffer_level(const std::string& source_id) const {
  std::lock_guard lock(mu_);
  auto it = accounts_.find(source_id);
  if (it == accounts_.end()) fail(ErrorCode::UnknownSource, source_id);
  const auto& a = it->second;
  return BufferStats{source_id, a.available, a.reserved, a.consumed, a.expired, a.threshold, a.available_blocks};
}

void KeyStore::set_threshold(const std::string& source_id, std::uint64_t bits) {
  std::lock_guard lock(mu_);
  accounts_[source_id].threshold = bits;
}

std::vector<std::string> KeyStore::sources() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [name, _] : accounts_) out.push_back(name);
  return out;
}

bool KeyStore::has_source(const std::string& source_id) const {
  std::lock_guard lock(mu_);
  return accounts_.count(source_id) != 0;
}

std::uint64_t KeyStore::available_bits(const NodeId& peer, const std::optional<std::string>& source_id) const {
  std::lock_guard lock(mu_);
  const SimTime t = now();
  std::uint64_t bits = 0;
  for (const auto& [source, idx] : index_) {
    if (idx.peer != peer || (source_id && source != *source_id)) continue;
    for (const auto& [created, id] : idx.available) {
      const auto& b = blocks_.at(id).block;
      if (b.expires_at > t) bits += b.bits();
    }
  }
  return bits;
}

std::vector<std::string> KeyStore::sources_for(const NodeId& peer) const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [source, idx] : index_)
    if (idx.peer == peer) out.push_back(source);
  return out;
}

std::size_t KeyStore::available_blocks(const NodeId& peer, const std::optional<std::string>& source_id) const {
  std::lock_guard lock(mu_);
  const SimTime t = now();
  std::size_t n = 0;
  for (const auto& [source, idx] : index_) {
    if (idx.peer != peer || (source_id && source != *source_id)) continue;
    for (const auto& [created, id] : idx.available) {
      if (blocks_.at(id).block.expires_at > t) ++n;
    }
  }
  return n;
}

std::optional<KeyState> KeyStore::state_of(const KeyId& id) const {
  std::lock_guard lock(mu_);
  auto it = blocks_.find(id);
  if (it == blocks_.end()) return std::nullopt;
  return it->second.block.state;
}

std::size_t KeyStore::block_count() const {
  std::lock_guard lock(mu_);
  return blocks_.size();
}

void DirectPeerSync::claim(const NodeId& peer, const KeyId& id, SimTime synced_at) {
  auto it = stores_.find(peer);
  if (it == stores_.end()) fail(ErrorCode::UnknownPeer, peer.value);
  it->second->claim(id, synced_at);
}

void DirectPeerSync::discard(const NodeId& peer, const KeyId& id) {
  auto it = stores_.find(peer);
  if (it == stores_.end()) fail(ErrorCode::UnknownPeer, peer.value);
  it->second->discard(id);
}

}  // namespace qsvpn::keystore
