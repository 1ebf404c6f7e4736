#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "qsvpn/common/bytes.hpp"
#include "qsvpn/common/sim_time.hpp"

namespace qsvpn::keystore {

enum class Technology { DvQkd, CvQkd, PqcKem, Relayed };
enum class KeyState { Available, Reserved, Consumed, Expired };

std::string_view to_string(Technology t) noexcept;
std::string_view to_string(KeyState s) noexcept;
Technology technology_from_string(std::string_view s);  // throws SchemaError
bool is_qkd(Technology t) noexcept;

// Keys ingested without an explicit lifetime live this long.
inline constexpr SimDuration kDefaultKeyLifetime = std::chrono::hours(24);
inline constexpr std::size_t kDefaultPpkOctets = 32;

struct KeyBlock {
  KeyId key_id;
  Bytes bytes;
  std::string origin;  // QKD link id, KEM session source, or relay path id
  NodeId peer;         // the other end of the pair this material is shared with
  Technology technology = Technology::DvQkd;
  SimTime created_at{0};
  SimTime expires_at{0};
  KeyState state = KeyState::Available;

  std::size_t bits() const { return bytes.size() * 8; }
};

struct PpkRecord {
  KeyId ppk_id;
  Bytes ppk;
  NodePair pair;
  SimTime expires_at{0};
  Technology technology = Technology::DvQkd;
  std::string origin;
};

struct BufferStats {
  std::string source_id;
  std::uint64_t available_bits = 0;
  std::uint64_t reserved_bits = 0;
  std::uint64_t consumed_bits = 0;
  std::uint64_t expired_bits = 0;
  std::uint64_t threshold_bits = 0;
  std::uint64_t available_blocks = 0;

  std::uint64_t total_bits() const { return available_bits + reserved_bits + consumed_bits + expired_bits; }
  bool below_threshold() const { return available_bits < threshold_bits; }
};

struct ReserveSelector {
  NodeId peer;
  std::size_t min_bits = kDefaultPpkOctets * 8;
  std::optional<Technology> preferred;   // soft: tried first, others fall back
  std::optional<std::string> source_id;  // hard filter on origin
};

struct KeyHandle {
  KeyId key_id;
  std::string source_id;
};

using ClockFn = std::function<SimTime()>;

/// Per-node key pool (the local key management store). Blocks move
/// AVAILABLE -> RESERVED -> CONSUMED, or to EXPIRED from any live state.
/// Every public member is linearizable.
class KeyStore {
 public:
  explicit KeyStore(NodeId owner, ClockFn clock = {});

  KeyStore(const KeyStore&) = delete;
  KeyStore& operator=(const KeyStore&) = delete;

  const NodeId& owner() const noexcept { return owner_; }

  // Optional peer allow-list; once non-empty, selectors naming a peer that is
  // neither listed nor shares any ingested material fail with NoSuchPair.
  void add_peer(const NodeId& peer);
  bool knows_peer(const NodeId& peer) const;

  KeyHandle ingest(KeyBlock block);

  // Draws the oldest matching AVAILABLE block (FIFO, ties by key id). The
  // returned ppk is the first min_bits of that block; the whole block is
  // reserved.
  PpkRecord reserve(const ReserveSelector& selector);

  // Peer-side mirror of a reservation made elsewhere: AVAILABLE -> RESERVED,
  // remembering when the synchronization landed.
  void claim(const KeyId& id, SimTime synced_at);
  std::optional<SimTime> synced_at(const KeyId& id) const;

  // AVAILABLE|RESERVED -> CONSUMED, returning the material.
  PpkRecord fetch_by_id(const KeyId& id);

  // RESERVED -> CONSUMED without returning material (initiator finished with it).
  void consume(const KeyId& id);

  // Destroys a live block (-> EXPIRED). No-op for blocks already terminal.
  void discard(const KeyId& id);

  std::size_t expire_sweep(SimTime now);

  BufferStats buffer_level(const std::string& source_id) const;
  void set_threshold(const std::string& source_id, std::uint64_t bits);

  std::vector<std::string> sources() const;
  bool has_source(const std::string& source_id) const;
  // Sources whose material is shared with `peer`.
  std::vector<std::string> sources_for(const NodeId& peer) const;

  // Available material shared with `peer`, optionally restricted to a source.
  std::uint64_t available_bits(const NodeId& peer, const std::optional<std::string>& source_id = {}) const;
  std::size_t available_blocks(const NodeId& peer, const std::optional<std::string>& source_id = {}) const;

  std::optional<KeyState> state_of(const KeyId& id) const;
  std::size_t block_count() const;
  SimTime now() const;

 private:
  struct Accounting {
    std::uint64_t available = 0;
    std::uint64_t reserved = 0;
    std::uint64_t consumed = 0;
    std::uint64_t expired = 0;
    std::uint64_t available_blocks = 0;
    std::uint64_t threshold = 0;
  };
  struct Entry {
    KeyBlock block;
    std::optional<SimTime> synced_at;
  };
  // AVAILABLE blocks of one source in FIFO order (created_at, then key id).
  struct SourceIndex {
    NodeId peer;
    std::set<std::pair<SimTime, KeyId>> available;
  };

  void transition(Entry& e, KeyState to);
  bool is_live_expired(const Entry& e, SimTime now) const;
  PpkRecord to_record(const Entry& e, std::size_t bits) const;
  void check_peer(const NodeId& peer) const;

  NodeId owner_;
  ClockFn clock_;
  mutable std::mutex mu_;
  std::map<KeyId, Entry> blocks_;
  std::set<KeyId> issued_;  // every id ever seen; ids are never reissued
  std::map<std::string, Accounting> accounts_;
  std::map<std::string, SourceIndex> index_;
  std::set<KeyId> reserved_;
  std::set<std::pair<SimTime, KeyId>> live_by_expiry_;  // AVAILABLE and RESERVED
  std::set<NodeId> peers_;
};

/// Propagates reservations to the peer store that holds the same material.
/// Implementations model the out-of-band channel between key sources.
class PeerSync {
 public:
  virtual ~PeerSync() = default;
  virtual void claim(const NodeId& peer, const KeyId& id, SimTime synced_at) = 0;
  virtual void discard(const NodeId& peer, const KeyId& id) = 0;
};

/// In-process sync straight into the peer stores.
class DirectPeerSync : public PeerSync {
 public:
  void attach(KeyStore& store) { stores_[store.owner()] = &store; }
  void claim(const NodeId& peer, const KeyId& id, SimTime synced_at) override;
  void discard(const NodeId& peer, const KeyId& id) override;

 private:
  std::map<NodeId, KeyStore*> stores_;
};

}  // namespace qsvpn::keystore
