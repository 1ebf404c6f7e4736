#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "qsvpn/common/sim_time.hpp"
#include "qsvpn/etsi/etsi014.hpp"
#include "qsvpn/kem/kms_establish.hpp"
#include "qsvpn/sdn/controller.hpp"

namespace qsvpn::skip {

using json = nlohmann::json;

inline constexpr int kSkipSchemaVersion = 1;

// Status codes carried in every SKIP response record.
enum class SkipStatus : int {
  Ok = 0,
  BadRequest = 400,     // BadLength, SchemaError
  Unauthorized = 401,   // AuthFailure
  NotFound = 404,       // UnknownPeer, UnknownPpkId
  Conflict = 409,       // KeyAlreadyConsumed
  Gone = 410,           // KeyExpired
  Unavailable = 503,    // NoKeyAvailable
  SyncTimedOut = 504,   // SyncTimeout
};
SkipStatus skip_status_for(ErrorCode code) noexcept;

struct SkipConfig {
  double skip_local_call_ms = 20.0;
  double kms_processing_ms = 250.0;
  double relay_hop_ms = 2.0;
  double sync_timeout_ms = 2000.0;
  std::set<std::size_t> supported_ppk_octets{keystore::kDefaultPpkOctets};
  std::size_t relay_key_bits = 256;
};

struct SkipCapabilities {
  std::string local_identity;
  std::vector<std::string> peer_identities;
  std::vector<std::size_t> supported_ppk_lengths;
  std::vector<std::string> technologies;  // source technologies with material right now

  bool operator==(const SkipCapabilities&) const = default;
  json to_json() const;
};

enum class ChannelState { Authenticated, Rejected };

struct SkipChannel {
  std::string client_id;
  std::string psk_id;
  ChannelState state = ChannelState::Rejected;
};

// How a PPK was sourced.
struct PpkGrant {
  Bytes ppk;
  KeyId ppk_id;
  sdn::SourceKind source = sdn::SourceKind::Qkd;
  sdn::PathKind path = sdn::PathKind::DirectQkd;
  sdn::SelectReason reason = sdn::SelectReason::QkdOk;
  keystore::Technology technology = keystore::Technology::DvQkd;
  std::string origin;
  SimTime synced_at{0};  // when the peer key source can serve ppk_id
};

template <typename T>
struct Timed {
  T value;
  SimDuration latency{0};
};

// Pre-provisioned PQC material between KMS pairs, refilled on demand.
class PqcPool {
 public:
  virtual ~PqcPool() = default;
  virtual std::string source_id(const NodePair& pair) const = 0;
  // Establishes one block at both ends now; returns the time it costs.
  // Throws ChannelDown / AuthFailure / KemFailure.
  virtual SimDuration establish_now(const NodePair& pair, SimTime now) = 0;
};

using PathDelayFn = std::function<SimDuration(const NodeId& from, const NodeId& to)>;

/// PQC pool backed by one KEM establisher per pair. Cost of an on-demand
/// establishment: three one-way transfers plus three KEM operations.
class KmsPqcPool : public PqcPool {
 public:
  KmsPqcPool(const kem::KemRegistry& registry, std::string params_name, PathDelayFn delay, double kem_compute_ms,
             std::uint64_t seed);

  // Registers both stores of a pair with a shared credential.
  void add_pair(keystore::KeyStore& a, keystore::KeyStore& b, Bytes credential);
  kem::KmsControlChannel& channel(const NodePair& pair);

  std::string source_id(const NodePair& pair) const override;
  SimDuration establish_now(const NodePair& pair, SimTime now) override;
  std::size_t block_bits() const noexcept { return block_bits_; }
  void set_block_bits(std::size_t bits) { block_bits_ = bits; }
  std::uint64_t establishments() const;

 private:
  struct Entry {
    std::unique_ptr<kem::KmsControlChannel> channel;
    std::unique_ptr<kem::KemProvider> provider;
    std::unique_ptr<kem::KmsKeyEstablisher> establisher;
  };
  const kem::KemRegistry& registry_;
  std::string params_;
  PathDelayFn delay_;
  double kem_compute_ms_;
  std::uint64_t seed_;
  std::size_t block_bits_ = 256;
  mutable std::mutex mu_;
  std::map<NodePair, Entry> pairs_;
  std::uint64_t establishments_ = 0;
};

struct SkipDeps {
  sdn::Controller* controller = nullptr;
  etsi::KeyIdDirectory* directory = nullptr;
  PqcPool* pqc = nullptr;
  PathDelayFn path_delay;  // one-way delay sample between two nodes
};

/// Key-source service of one trusted node, as seen by its local router.
class SkipService {
 public:
  SkipService(keystore::KeyStore& store, SkipDeps deps, SkipConfig config = {});

  const NodeId& node() const noexcept { return store_.owner(); }
  std::string identity() const { return identity_for(node()); }
  static std::string identity_for(const NodeId& node) { return "ks:" + node.value; }
  const SkipConfig& config() const noexcept { return config_; }

  void register_client(const std::string& client_id, const std::string& psk_id, Bytes psk);

  // Channel setup: the client answers a fresh challenge with
  // PRF(psk, "skip-auth" || client_id || challenge).
  Bytes challenge();
  SkipChannel authenticate(const std::string& client_id, const std::string& psk_id, ByteView challenge, ByteView proof);

  Timed<SkipCapabilities> get_capabilities(const SkipChannel& channel, SimTime now) const;
  Timed<PpkGrant> get_key(const SkipChannel& channel, const NodeId& peer, std::size_t ppk_octets, SimTime now);
  Timed<Bytes> get_key_by_id(const SkipChannel& channel, const KeyId& ppk_id, SimTime now);

  // Record form: {"operation", "client_id", "psk_id", "peer_id", "ppk_len", "ppk_id", "now_us"}.
  json handle(const SkipChannel& channel, const json& request);

  std::uint64_t grants() const;

 private:
  void require_auth(const SkipChannel& channel) const;
  SimDuration ms(double v) const { return from_ms(v); }
  std::optional<Timed<PpkGrant>> try_qkd(const NodeId& peer, const sdn::PathPlan& plan, std::size_t octets, SimTime now);
  std::optional<Timed<PpkGrant>> try_pqc(const NodeId& peer, std::size_t octets, SimTime now);
  SimDuration sync_rtt(const NodeId& peer) const;

  keystore::KeyStore& store_;
  SkipDeps deps_;
  SkipConfig config_;
  mutable std::mutex mu_;
  struct Client {
    std::string psk_id;
    Bytes psk;
  };
  std::map<std::string, Client> clients_;
  std::set<Bytes> outstanding_challenges_;
  std::uint64_t challenge_counter_ = 0;
  std::uint64_t grants_ = 0;
};

// Proof a client presents for a challenge.
Bytes skip_auth_proof(ByteView psk, const std::string& client_id, ByteView challenge);

/// Router-side client bound to one local service.
class SkipClient {
 public:
  SkipClient(SkipService& service, std::string client_id, std::string psk_id, Bytes psk);

  // Runs the challenge/response handshake; the resulting channel may be REJECTED.
  const SkipChannel& connect();
  const SkipChannel& channel() const noexcept { return channel_; }
  SkipService& service() noexcept { return service_; }

  Timed<SkipCapabilities> get_capabilities(SimTime now) const { return service_.get_capabilities(channel_, now); }
  Timed<PpkGrant> get_key(const NodeId& peer, std::size_t octets, SimTime now) { return service_.get_key(channel_, peer, octets, now); }
  Timed<Bytes> get_key_by_id(const KeyId& id, SimTime now) { return service_.get_key_by_id(channel_, id, now); }

 private:
  SkipService& service_;
  std::string client_id_;
  std::string psk_id_;
  Bytes psk_;
  SkipChannel channel_;
};

}  // namespace qsvpn::skip
