#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qsvpn/ike/dh.hpp"
#include "qsvpn/ike/esp.hpp"
#include "qsvpn/ike/key_schedule.hpp"
#include "qsvpn/sim/transport.hpp"
#include "qsvpn/skip/skip.hpp"

namespace qsvpn::ike {

enum class IkeMode { EcdhOnly, Ppk };
enum class SaStatus { Negotiating, Ready, Rekeyed, Expired, Failed };
// Probe SAs are installed at both ends but never carry traffic or rekey.
enum class SetupKind { Initial, Rekey, Probe };
enum class Role { Initiator, Responder };
enum class RekeyFallback { Abort, EcdhOnly };

std::string_view to_string(IkeMode m) noexcept;
std::string_view to_string(SaStatus s) noexcept;
std::string_view to_string(SetupKind k) noexcept;
IkeMode ike_mode_from_string(std::string_view s);

struct LatencyBreakdown {
  SimDuration t_sa_init{0};
  SimDuration t_get_key{0};
  SimDuration t_ike_auth{0};
  SimDuration total() const { return t_sa_init + t_get_key + t_ike_auth; }
};

struct SecurityAssociation {
  std::string sa_id;
  std::string tunnel_id;
  NodeId local;
  NodeId peer;
  Role role = Role::Initiator;
  IkeMode mode = IkeMode::Ppk;
  SetupKind kind = SetupKind::Initial;
  std::string replaces;
  std::uint64_t spi_i = 0;
  std::uint64_t spi_r = 0;
  KeySchedule key_schedule;
  std::uint32_t lifetime_s = 600;
  SimTime created_at{0};
  SaStatus status = SaStatus::Negotiating;
  bool ppk_used = false;
  bool ppk_inherited = false;  // rekey without a fresh PPK
  std::optional<KeyId> ppk_id;
  bool qr = false;  // quantum-resistant: a PPK entered SK_d
  LatencyBreakdown latency;
  EspSender out;
  EspReceiver in;

  SimTime expires_at() const { return created_at + from_s(lifetime_s); }
};

// One completed (or aborted) setup, as seen by the initiator.
struct SetupRecord {
  std::string sa_id;
  NodeId initiator;
  NodeId responder;
  IkeMode mode = IkeMode::Ppk;
  SetupKind kind = SetupKind::Initial;
  std::string replaces;
  SimTime started_at{0};
  SimTime finished_at{0};
  LatencyBreakdown latency;
  std::optional<KeyId> ppk_id;
  std::string source = "-";  // QKD | PQC | INHERITED | -
  std::string path = "-";
  std::string technology = "-";
  std::optional<ErrorCode> error;

  bool ok() const { return !error.has_value(); }
  std::string status() const;
};

struct IkeConfig {
  double ecdh_compute_ms = 9.65;
  double timeout_ms = 5000.0;
  std::uint32_t lifetime_s = 600;
  std::uint32_t rekey_margin_s = 60;
  std::size_t ppk_octets = keystore::kDefaultPpkOctets;
  bool require_ppk = true;
  bool rekey_fresh_ppk = true;  // capability: fresh PPK on every rekey
  bool auto_rekey = true;
  RekeyFallback rekey_fallback = RekeyFallback::Abort;
  double rekey_retry_s = 10.0;
};

inline constexpr const char* kIkeChannel = "ike";

/// IKEv2-with-PPK endpoint of one router. Single-threaded over the event
/// loop; talks to peers only through transport messages on the "ike" channel.
class IkeDaemon {
 public:
  using SetupCallback = std::function<void(const SetupRecord&)>;
  using SaCallback = std::function<void(const SecurityAssociation&)>;

  IkeDaemon(NodeId node, sim::Transport& transport, const DhProvider& dh, IkeConfig config, std::uint64_t seed,
            skip::SkipClient* skip);

  const NodeId& node() const noexcept { return node_; }
  const IkeConfig& config() const noexcept { return config_; }
  void set_psk(const NodeId& peer, Bytes psk);
  void set_skip(skip::SkipClient* skip) { skip_ = skip; }

  // Observers: every initiator-side outcome; every SA install (both roles).
  void on_setup(SetupCallback cb) { setup_observers_.push_back(std::move(cb)); }
  void on_ready(SaCallback cb) { ready_observers_.push_back(std::move(cb)); }

  // Starts SA_INIT toward `peer`; `done` fires once with the outcome.
  // `kind` is Initial or Probe.
  std::string initiate(const NodeId& peer, IkeMode mode, SetupCallback done = {}, SetupKind kind = SetupKind::Initial);

  // Data plane.
  const SecurityAssociation* outbound(const NodeId& peer) const;
  EspPacket protect_to(const NodeId& peer, ByteView plaintext);
  EspPacket protect_on(const std::string& sa_id, ByteView plaintext);
  Bytes unprotect(const EspPacket& packet);

  const SecurityAssociation* sa(const std::string& sa_id) const;
  std::vector<const SecurityAssociation*> sas() const;
  std::size_t in_flight() const noexcept { return pending_.size(); }

 private:
  struct Pending {
    std::string sa_id;
    NodeId peer;
    IkeMode mode;
    SetupKind kind;
    std::string replaces;
    SimTime started_at;
    SimTime init_done{0};
    SimTime auth_start{0};
    DhKeyPair dh;
    Bytes ni, nr;
    std::uint64_t spi_i = 0, spi_r = 0;
    bool peer_fresh_ppk = false;
    bool use_ppk = false;
    KeySchedule ks;
    std::optional<skip::PpkGrant> grant;
    bool inherited = false;
    std::uint64_t timer = 0;
    SetupRecord record;
    SetupCallback done;
  };
  struct HalfOpen {
    std::string sa_id;
    NodeId peer;
    IkeMode mode;
    SetupKind kind;
    std::string replaces;
    std::uint64_t spi_i = 0, spi_r = 0;
    Bytes ni, nr;
    KeySchedule ks;
    std::uint64_t timer = 0;
    bool busy = false;
  };

  std::string start(const NodeId& peer, IkeMode mode, SetupKind kind, const std::string& replaces, SetupCallback done);
  void receive(const sim::Envelope& env);
  void send(const NodeId& peer, sim::json msg);
  void arm_timeout(Pending& p);

  void send_init(const std::string& sa_id);
  void on_init_resp(const sim::json& msg);
  void get_key_phase(Pending& p);
  void begin_auth(const std::string& sa_id);
  void on_auth_resp(const sim::json& msg);
  void finish(const std::string& sa_id, std::optional<ErrorCode> error);

  void on_init_req(const NodeId& from, const sim::json& msg);
  void on_auth_req(const NodeId& from, const sim::json& msg);
  void respond_error(const NodeId& peer, const std::string& sa_id, ErrorCode code);

  SecurityAssociation& install(SecurityAssociation sa);
  void activate(const std::string& sa_id);
  void schedule_rekey(const std::string& sa_id);
  void rekey(const std::string& sa_id);
  const Bytes& psk_for(const NodeId& peer) const;
  SimDuration compute() const { return from_ms(config_.ecdh_compute_ms); }

  NodeId node_;
  sim::Transport& transport_;
  sim::EventLoop& loop_;
  const DhProvider& dh_;
  IkeConfig config_;
  DeterministicRng rng_;
  skip::SkipClient* skip_;
  std::map<NodeId, Bytes> psks_;
  std::uint64_t counter_ = 0;
  std::map<std::string, Pending> pending_;
  std::map<std::string, HalfOpen> half_open_;
  std::map<std::string, SecurityAssociation> sas_;
  std::map<NodeId, std::string> outbound_;
  std::vector<SetupCallback> setup_observers_;
  std::vector<SaCallback> ready_observers_;
};

}  // namespace qsvpn::ike
