#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qsvpn/etsi/etsi014.hpp"
#include "qsvpn/harness/config.hpp"
#include "qsvpn/ike/dmvpn.hpp"
#include "qsvpn/kem/kem.hpp"
#include "qsvpn/qkd/qkd_link.hpp"
#include "qsvpn/sdn/controller.hpp"
#include "qsvpn/sim/event_loop.hpp"
#include "qsvpn/sim/transport.hpp"
#include "qsvpn/skip/skip.hpp"

namespace qsvpn::harness {

struct BufferSample {
  SimTime at{0};
  NodeId node;
  std::string source;
  std::uint64_t available_bits = 0;
};

struct AppliedEvent {
  SimTime at{0};
  ScriptedKind kind = ScriptedKind::FiberCut;
  std::string target;
};

struct ScenarioCounters {
  std::uint64_t agreement_checks = 0;
  std::uint64_t no_route = 0;        // packets refused at the source
  std::uint64_t rekeys_ok = 0;
  std::uint64_t setups_failed = 0;
  std::uint64_t pqc_establishments = 0;
  std::uint64_t events_executed = 0;
};

struct ScenarioResult {
  std::string scenario;
  std::uint64_t seed = 0;
  SimTime ended_at{0};
  std::vector<ike::SetupRecord> setups;
  std::vector<sdn::SwitchAction> switches;
  std::vector<BufferSample> buffers;
  std::vector<ike::HopEvent> hops;
  std::vector<AppliedEvent> events;
  ike::OverlayStats overlay;
  sim::TransportStats transport;
  ScenarioCounters counters;
};

struct WorldOptions {
  bool traffic = true;        // scenario packet flows
  bool overlay_boot = true;   // NHRP registration and hub-spoke SAs after warm-up
  bool scripted_events = true;
  std::optional<ike::IkeMode> mode;  // overrides the scenario's IKE mode
  std::optional<std::vector<sdn::SourceKind>> source_preference;
  bool auto_rekey = true;
  bool check_agreement = true;          // ScenarioPanic on any end-to-end mismatch
  std::optional<SimTime> traffic_until;  // flows stop sending at this instant
};

/// One simulated network: every module instantiated per node and driven by
/// a single event loop. Invariant breaches throw ScenarioPanic out of run_until.
class World {
 public:
  explicit World(TopologyConfig config, WorldOptions options = {});
  ~World();
  World(const World&) = delete;
  World& operator=(const World&) = delete;

  // Schedules timers, warm-up boot and scripted events. Call once.
  void start();
  void run_until(SimTime t);

  const TopologyConfig& config() const noexcept { return config_; }
  sim::EventLoop& loop() noexcept { return loop_; }
  sim::Transport& transport() noexcept { return *transport_; }
  sdn::Controller& controller() noexcept { return *controller_; }
  qkd::QkdNetwork& qkd() noexcept { return qkd_; }
  keystore::KeyStore& store(const NodeId& n) { return *stores_.at(n); }
  skip::SkipService& skip(const NodeId& n) { return *skips_.at(n); }
  skip::KmsPqcPool& pqc() noexcept { return *pool_; }
  ike::IkeDaemon& daemon(const NodeId& n) { return *daemons_.at(n); }
  ike::DmvpnOverlay& overlay() noexcept { return *overlay_; }
  ike::IkeMode mode() const noexcept { return mode_; }
  etsi::KeyIdDirectory& directory() noexcept { return directory_; }

  // Runs one probe setup now; `done` fires with the initiator's record.
  void probe(const NodeId& initiator, const NodeId& responder, std::function<void(const ike::SetupRecord&)> done = {});

  // Compares both ends of a finished setup; ScenarioPanic on any mismatch.
  void check_agreement(const ike::SetupRecord& rec);

  const ScenarioResult& result();

 private:
  void build();
  void telemetry_tick();
  void policy_tick();
  void sample_buffers();
  void top_up_pqc();
  void apply(const ScriptedEvent& ev);
  void boot_overlay();
  void register_spoke(const NodeId& spoke);
  void connect_hub(const NodeId& spoke);
  void start_traffic();
  void flow(const NodeId& src, const NodeId& dst);
  void on_setup(const ike::SetupRecord& rec);

  TopologyConfig config_;
  WorldOptions options_;
  ike::IkeMode mode_;
  sim::EventLoop loop_;
  std::unique_ptr<sim::Transport> transport_;
  std::map<NodeId, std::unique_ptr<keystore::KeyStore>> stores_;
  qkd::QkdNetwork qkd_;
  std::unique_ptr<sdn::Controller> controller_;
  std::map<NodeId, std::unique_ptr<sdn::Agent>> agents_;
  etsi::KeyIdDirectory directory_;
  kem::KemRegistry registry_;
  std::unique_ptr<skip::KmsPqcPool> pool_;
  std::map<NodeId, std::unique_ptr<skip::SkipService>> skips_;
  std::map<NodeId, std::unique_ptr<skip::SkipClient>> clients_;
  std::unique_ptr<ike::DhProvider> dh_;
  std::map<NodeId, std::unique_ptr<ike::IkeDaemon>> daemons_;
  std::unique_ptr<ike::DmvpnOverlay> overlay_;
  std::uint64_t payload_counter_ = 0;
  bool started_ = false;
  ScenarioResult result_;
};

// Runs the scenario for `duration` (config duration when absent) and drains
// in-flight packets.
ScenarioResult run_scenario(const TopologyConfig& config, std::optional<SimDuration> duration = {},
                            WorldOptions options = {});

enum class MeasureMode { EcdhOnly, Ppk, PpkQkd, PpkPqc };
std::string_view to_string(MeasureMode m) noexcept;
MeasureMode measure_mode_from_string(std::string_view s);

struct PhaseStats {
  double mean_ms = 0.0;
  double variance_ms2 = 0.0;
};

struct MeasureResult {
  NodeId initiator;
  NodeId responder;
  MeasureMode mode = MeasureMode::Ppk;
  std::size_t runs = 0;
  std::size_t failed = 0;
  PhaseStats sa_init, get_key, ike_auth, total;
  std::vector<ike::SetupRecord> records;
};

// n back-to-back probe setups between the pair after warm-up.
MeasureResult measure_sa_setup(const TopologyConfig& config, const NodeId& initiator, const NodeId& responder,
                               MeasureMode mode, std::size_t n);

struct SweepResult {
  std::size_t setups = 0;
  std::size_t failed = 0;
  std::size_t ppk_mismatches = 0;
  std::size_t sk_d_mismatches = 0;
  std::size_t packets = 0;
  std::size_t decrypt_failures = 0;
  std::map<std::string, std::size_t> by_path;
};

// Back-to-back PPK probe setups on every node pair concurrently, each
// checked at both ends and exercised with ESP packets in both directions.
SweepResult run_agreement_sweep(const TopologyConfig& config, std::size_t setups_per_pair, std::size_t packets_per_sa = 4);

}  // namespace qsvpn::harness
