#include "qsvpn/harness/world.hpp"

#include <algorithm>
#include <cmath>

#include "qsvpn/common/crypto.hpp"
#include "qsvpn/common/error.hpp"

namespace qsvpn::harness {

namespace {

Bytes derive_secret(const std::string& label, std::uint64_t seed) {
  Bytes in = to_bytes(label);
  append_u64_be(in, seed);
  Bytes h = crypto::sha512(in);
  h.resize(32);
  return h;
}

std::vector<NodePair> all_pairs(const std::vector<NodeId>& ids) {
  std::vector<NodePair> out;
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = i + 1; j < ids.size(); ++j) out.emplace_back(ids[i], ids[j]);
  return out;
}

}  // namespace

World::World(TopologyConfig config, WorldOptions options)
    : config_(std::move(config)),
      options_(std::move(options)),
      mode_(options_.mode.value_or(config_.ike.mode)),
      registry_(kem::KemRegistry::with_builtin()) {
  validate_topology(config_);
  build();
}

World::~World() = default;

void World::build() {
  const std::uint64_t seed = config_.seed;
  transport_ = std::make_unique<sim::Transport>(loop_, seed);
  for (const auto& t : config_.transport_links) transport_->add_link(t);
  auto delay = [this](const NodeId& a, const NodeId& b) { return transport_->nominal_delay(a, b); };

  sdn::Policy policy = config_.policy;
  if (options_.source_preference) policy.source_preference = *options_.source_preference;
  controller_ = std::make_unique<sdn::Controller>(policy);

  for (const auto& n : config_.nodes) {
    const NodeId& id = n.descriptor.node_id;
    stores_[id] = std::make_unique<keystore::KeyStore>(id, [this] { return loop_.now(); });
    sdn::NodeDescriptor d = n.descriptor;
    for (const auto& l : config_.qkd_links)
      if (l.a == id || l.b == id) d.qkd_links.push_back(l.link_id);
    d.agent_session = "agent:" + id.value;
    controller_->register_node(d);
  }
  for (const auto& l : config_.qkd_links) {
    controller_->register_link({l.link_id, l.a, l.b, l.technology});
    qkd_.add_link(l, *stores_.at(l.a), *stores_.at(l.b));
    qkd_.seed_stream(l.link_id, seed ^ source_tag(l.link_id));
  }
  for (const auto& n : config_.nodes) {
    const NodeId& id = n.descriptor.node_id;
    agents_[id] = std::make_unique<sdn::Agent>(*controller_->node(id), *stores_.at(id), seed ^ source_tag(id.value));
    controller_->attach_agent(*agents_[id]);
  }

  const auto& k = config_.calibration;
  pool_ = std::make_unique<skip::KmsPqcPool>(registry_, config_.pqc.kem, delay, k.kem_compute_ms, seed);
  pool_->set_block_bits(config_.policy.block_size_bits);
  for (const auto& pair : all_pairs(config_.node_ids()))
    pool_->add_pair(*stores_.at(pair.first), *stores_.at(pair.second), derive_secret("kms-credential:" + pair.label(), seed));

  skip::SkipConfig sc;
  sc.skip_local_call_ms = k.skip_local_call_ms;
  sc.kms_processing_ms = k.kms_processing_ms;
  sc.relay_hop_ms = k.relay_hop_ms;
  sc.sync_timeout_ms = k.sync_timeout_ms;
  sc.relay_key_bits = config_.policy.block_size_bits;
  dh_ = ike::make_dh_provider(config_.ike.dh_group);

  for (const auto& n : config_.nodes) {
    const NodeId& id = n.descriptor.node_id;
    skips_[id] = std::make_unique<skip::SkipService>(*stores_.at(id), skip::SkipDeps{controller_.get(), &directory_, pool_.get(), delay}, sc);
    Bytes psk = derive_secret("skip-psk:" + id.value, seed);
    skips_[id]->register_client("router-" + id.value, "psk-" + id.value, psk);
    clients_[id] = std::make_unique<skip::SkipClient>(*skips_[id], "router-" + id.value, "psk-" + id.value, psk);
    clients_[id]->connect();

    ike::IkeConfig ic;
    ic.ecdh_compute_ms = config_.ecdh_ms(id);
    ic.timeout_ms = config_.ike.timeout_ms;
    ic.lifetime_s = static_cast<std::uint32_t>(config_.policy.sa_lifetime_s);
    ic.rekey_margin_s = static_cast<std::uint32_t>(config_.policy.rekey_margin_s);
    ic.require_ppk = mode_ == ike::IkeMode::Ppk && config_.ike.require_ppk;
    ic.rekey_fresh_ppk = n.rekey_fresh_ppk;
    ic.auto_rekey = options_.auto_rekey;
    ic.rekey_fallback = config_.ike.rekey_fallback;
    daemons_[id] = std::make_unique<ike::IkeDaemon>(id, *transport_, *dh_, ic, seed, clients_[id].get());
    daemons_[id]->on_setup([this](const ike::SetupRecord& r) { on_setup(r); });
  }
  for (const auto& pair : all_pairs(config_.node_ids())) {
    Bytes psk = derive_secret("ike-psk:" + pair.label(), seed);
    daemons_.at(pair.first)->set_psk(pair.second, psk);
    daemons_.at(pair.second)->set_psk(pair.first, psk);
  }

  std::map<NodeId, ike::IkeDaemon*> ptrs;
  for (auto& [id, d] : daemons_) ptrs[id] = d.get();
  overlay_ = std::make_unique<ike::DmvpnOverlay>(*transport_, config_.hub(), ptrs, ike::OverlayConfig{mode_, 2000.0});
  overlay_->on_loss([this](const ike::DeliveryRecord& r, ErrorCode code) {
    if (code == ErrorCode::DecryptFailure || code == ErrorCode::ScenarioPanic)
      fail(ErrorCode::ScenarioPanic, "packet " + std::to_string(r.packet_id) + " " + r.src.value + "->" + r.dst.value +
                                         " failed with " + std::string(to_string(code)));
  });
}

void World::start() {
  if (started_) fail(ErrorCode::ScenarioPanic, "world already started");
  started_ = true;
  result_.scenario = config_.name;
  result_.seed = config_.seed;
  telemetry_tick();
  loop_.schedule_in(from_s(config_.timers.policy_tick_s), [this] { policy_tick(); });
  loop_.schedule_in(from_s(config_.timers.buffer_sample_s), [this] { sample_buffers(); });
  if (options_.overlay_boot) loop_.schedule_at(from_s(config_.warmup_s), [this] { boot_overlay(); });
  if (options_.traffic && config_.traffic.enabled) start_traffic();
  if (options_.scripted_events)
    for (const auto& ev : config_.events) loop_.schedule_at(from_s(ev.at_s), [this, ev] { apply(ev); });
}

void World::run_until(SimTime t) { loop_.run_until(t); }

void World::telemetry_tick() {
  SimTime now = loop_.now();
  qkd_.advance_all_to(now);
  qkd_.drain_reports();
  for (const auto& id : qkd_.link_ids()) {
    const auto& p = qkd_.profile(id);
    auto& st = *stores_.at(p.a);
    std::uint64_t bits = st.has_source(id) ? st.buffer_level(id).available_bits : 0;
    controller_->report_link_state(id, p.status, bits, now);
  }
  for (auto& [_, s] : stores_) s->expire_sweep(now);
  top_up_pqc();
  loop_.schedule_in(from_s(config_.timers.telemetry_s), [this] { telemetry_tick(); });
}

void World::policy_tick() {
  for (auto& a : controller_->policy_tick(loop_.now())) result_.switches.push_back(std::move(a));
  loop_.schedule_in(from_s(config_.timers.policy_tick_s), [this] { policy_tick(); });
}

void World::sample_buffers() {
  SimTime now = loop_.now();
  for (const auto& id : qkd_.link_ids()) {
    const auto& p = qkd_.profile(id);
    for (const NodeId& n : {p.a, p.b}) {
      auto& st = *stores_.at(n);
      result_.buffers.push_back({now, n, id, st.has_source(id) ? st.buffer_level(id).available_bits : 0});
    }
  }
  for (const auto& pair : all_pairs(config_.node_ids())) {
    auto src = pool_->source_id(pair);
    auto& st = *stores_.at(pair.first);
    result_.buffers.push_back({now, pair.first, src, st.has_source(src) ? st.buffer_level(src).available_bits : 0});
  }
  loop_.schedule_in(from_s(config_.timers.buffer_sample_s), [this] { sample_buffers(); });
}

void World::top_up_pqc() {
  for (const auto& pair : all_pairs(config_.node_ids())) {
    if (!controller_->pqc_available(pair)) continue;
    auto src = pool_->source_id(pair);
    auto& st = *stores_.at(pair.first);
    try {
      while (st.available_blocks(pair.second, src) < config_.pqc.pool_min_blocks) pool_->establish_now(pair, loop_.now());
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ChannelDown && e.code() != ErrorCode::AuthFailure && e.code() != ErrorCode::KemFailure) throw;
    }
  }
}

void World::apply(const ScriptedEvent& ev) {
  SimTime now = loop_.now();
  std::string target;
  switch (ev.kind) {
    case ScriptedKind::FiberCut:
    case ScriptedKind::Recovery:
    case ScriptedKind::NoiseIncrease: {
      qkd_.advance_all_to(now);
      auto kind = ev.kind == ScriptedKind::FiberCut   ? qkd::DegradationKind::FiberCut
                  : ev.kind == ScriptedKind::Recovery ? qkd::DegradationKind::Recovery
                                                      : qkd::DegradationKind::NoiseIncrease;
      qkd_.inject_event({ev.link_id, kind, now, ev.rate_factor});
      target = ev.link_id;
      break;
    }
    case ScriptedKind::NodeDown:
    case ScriptedKind::NodeUp:
      transport_->set_node_up(ev.node, ev.kind == ScriptedKind::NodeUp);
      target = ev.node.value;
      break;
    case ScriptedKind::ProbeSetup:
      probe(ev.initiator, ev.responder);
      target = ev.initiator.value + ">" + ev.responder.value;
      break;
  }
  result_.events.push_back({now, ev.kind, target});
}

void World::boot_overlay() {
  for (const NodeId& spoke : config_.spokes()) register_spoke(spoke);
}

// Registration, then the spoke's SA to the hub; both retried until they succeed.
void World::register_spoke(const NodeId& spoke) {
  overlay_->nhrp_register(spoke, config_.node(spoke).nbma, [this, spoke](const ike::NhrpResult& r) {
    if (r.error) {
      loop_.schedule_in(from_s(5), [this, spoke] { register_spoke(spoke); });
      return;
    }
    connect_hub(spoke);
  });
}

void World::connect_hub(const NodeId& spoke) {
  daemons_.at(spoke)->initiate(config_.hub(), mode_, [this, spoke](const ike::SetupRecord& rec) {
    if (!rec.ok()) loop_.schedule_in(from_s(5), [this, spoke] { connect_hub(spoke); });
  });
}

void World::flow(const NodeId& src, const NodeId& dst) {
  if (options_.traffic_until && loop_.now() >= *options_.traffic_until) return;
  Bytes payload = to_bytes("pkt:" + std::to_string(++payload_counter_) + ":" + src.value + ">" + dst.value);
  try {
    overlay_->forward_packet(src, dst, std::move(payload));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoRoute && e.code() != ErrorCode::SaNotReady) throw;
    ++result_.counters.no_route;
  }
  loop_.schedule_in(from_ms(config_.traffic.packet_interval_ms), [this, src, dst] { flow(src, dst); });
}

void World::start_traffic() {
  const NodeId hub = config_.hub();
  const auto spokes = config_.spokes();
  for (const NodeId& s : spokes) {
    loop_.schedule_at(from_s(config_.traffic.hub_flows_start_s), [this, hub, s] {
      flow(hub, s);
      flow(s, hub);
    });
  }
  std::size_t k = 0;
  for (const auto& pair : all_pairs(spokes)) {
    SimTime at = from_s(config_.traffic.spoke_pairs_start_s + static_cast<double>(k++) * config_.traffic.spoke_pair_stagger_s);
    loop_.schedule_at(at, [this, pair] {
      flow(pair.first, pair.second);
      flow(pair.second, pair.first);
    });
  }
}

void World::probe(const NodeId& initiator, const NodeId& responder, std::function<void(const ike::SetupRecord&)> done) {
  daemons_.at(initiator)->initiate(responder, mode_, std::move(done), ike::SetupKind::Probe);
}

void World::check_agreement(const ike::SetupRecord& rec) {
  auto panic = [&](const std::string& what) {
    fail(ErrorCode::ScenarioPanic, "SA " + rec.sa_id + " " + rec.initiator.value + "-" + rec.responder.value + ": " + what);
  };
  const auto* a = daemons_.at(rec.initiator)->sa(rec.sa_id);
  const auto* b = daemons_.at(rec.responder)->sa(rec.sa_id);
  if (!a || !b) panic("missing at one end");
  if (a->key_schedule.sk_d != b->key_schedule.sk_d) panic("sk_d differs");
  if (a->key_schedule.ppk != b->key_schedule.ppk) panic("PPK differs");
  if (a->ppk_id != b->ppk_id) panic("ppk_id differs");
  if (a->key_schedule.sk_d.size() != ike::kSkDSize) panic("sk_d length");
  if (daemons_.at(rec.initiator)->config().require_ppk && !(a->ppk_used && b->ppk_used && a->ppk_id)) panic("READY without PPK");
  if (rec.latency.total() != rec.latency.t_sa_init + rec.latency.t_get_key + rec.latency.t_ike_auth) panic("latency identity");
  ++result_.counters.agreement_checks;
}

void World::on_setup(const ike::SetupRecord& rec) {
  if (rec.finished_at < rec.started_at) fail(ErrorCode::ScenarioPanic, "setup finished before it started");
  result_.setups.push_back(rec);
  if (!rec.ok()) {
    ++result_.counters.setups_failed;
    return;
  }
  if (rec.kind == ike::SetupKind::Rekey) ++result_.counters.rekeys_ok;
  if (options_.check_agreement) check_agreement(rec);
}

const ScenarioResult& World::result() {
  result_.ended_at = loop_.now();
  result_.hops = overlay_->hop_events();
  result_.overlay = overlay_->stats();
  result_.transport = transport_->stats();
  result_.counters.pqc_establishments = pool_->establishments();
  result_.counters.events_executed = loop_.executed();
  return result_;
}

ScenarioResult run_scenario(const TopologyConfig& config, std::optional<SimDuration> duration, WorldOptions options) {
  SimTime end = duration.value_or(from_s(config.duration_s));
  options.traffic_until = end;
  World w(config, options);
  w.start();
  w.run_until(end);
  // Drain packets still in flight; nothing new is sent past `end`.
  w.run_until(end + from_s(5));
  ScenarioResult r = w.result();
  r.ended_at = end;
  std::erase_if(r.setups, [&](const ike::SetupRecord& s) { return s.started_at > end; });
  std::erase_if(r.switches, [&](const sdn::SwitchAction& s) { return s.at > end; });
  std::erase_if(r.buffers, [&](const BufferSample& s) { return s.at > end; });
  std::erase_if(r.hops, [&](const ike::HopEvent& h) { return h.at > end; });
  std::erase_if(r.events, [&](const AppliedEvent& e) { return e.at > end; });
  return r;
}

std::string_view to_string(MeasureMode m) noexcept {
  switch (m) {
    case MeasureMode::EcdhOnly: return "ECDH_ONLY";
    case MeasureMode::Ppk: return "PPK";
    case MeasureMode::PpkQkd: return "PPK_QKD";
    case MeasureMode::PpkPqc: return "PPK_PQC";
  }
  return "?";
}

MeasureMode measure_mode_from_string(std::string_view s) {
  for (auto m : {MeasureMode::EcdhOnly, MeasureMode::Ppk, MeasureMode::PpkQkd, MeasureMode::PpkPqc})
    if (to_string(m) == s) return m;
  fail(ErrorCode::SchemaError, "unknown measure mode " + std::string(s));
}

namespace {

PhaseStats stats_of(const std::vector<double>& xs) {
  PhaseStats s;
  if (xs.empty()) return s;
  double sum = 0;
  for (double x : xs) sum += x;
  s.mean_ms = sum / static_cast<double>(xs.size());
  double var = 0;
  for (double x : xs) var += (x - s.mean_ms) * (x - s.mean_ms);
  s.variance_ms2 = var / static_cast<double>(xs.size());
  return s;
}

WorldOptions quiet_options() {
  WorldOptions o;
  o.traffic = false;
  o.overlay_boot = false;
  o.scripted_events = false;
  o.auto_rekey = false;
  return o;
}

}  // namespace

MeasureResult measure_sa_setup(const TopologyConfig& config, const NodeId& initiator, const NodeId& responder,
                               MeasureMode mode, std::size_t n) {
  WorldOptions o = quiet_options();
  o.mode = mode == MeasureMode::EcdhOnly ? ike::IkeMode::EcdhOnly : ike::IkeMode::Ppk;
  if (mode == MeasureMode::PpkQkd) o.source_preference = std::vector<sdn::SourceKind>{sdn::SourceKind::Qkd};
  if (mode == MeasureMode::PpkPqc) o.source_preference = std::vector<sdn::SourceKind>{sdn::SourceKind::Pqc};
  World w(config, o);
  w.start();
  w.run_until(from_s(config.warmup_s));

  MeasureResult r{initiator, responder, mode};
  std::function<void()> next = [&] {
    w.probe(initiator, responder, [&](const ike::SetupRecord& rec) {
      r.records.push_back(rec);
      if (r.records.size() < n) next();
    });
  };
  if (n > 0) next();
  while (r.records.size() < n && w.loop().step()) {
  }
  std::vector<double> a, g, au, t;
  for (const auto& rec : r.records) {
    if (!rec.ok()) {
      ++r.failed;
      continue;
    }
    a.push_back(to_ms(rec.latency.t_sa_init));
    g.push_back(to_ms(rec.latency.t_get_key));
    au.push_back(to_ms(rec.latency.t_ike_auth));
    t.push_back(to_ms(rec.latency.total()));
  }
  r.runs = r.records.size();
  r.sa_init = stats_of(a);
  r.get_key = stats_of(g);
  r.ike_auth = stats_of(au);
  r.total = stats_of(t);
  return r;
}

SweepResult run_agreement_sweep(const TopologyConfig& config, std::size_t setups_per_pair, std::size_t packets_per_sa) {
  WorldOptions o = quiet_options();
  o.mode = ike::IkeMode::Ppk;
  o.check_agreement = false;
  World w(config, o);
  w.start();
  w.run_until(from_s(config.warmup_s));

  SweepResult r;
  std::size_t done_pairs = 0;
  auto pairs = all_pairs(config.node_ids());
  std::map<NodePair, std::size_t> issued;
  std::function<void(const NodePair&)> next = [&](const NodePair& pair) {
    std::size_t i = issued[pair]++;
    NodeId a = i % 2 ? pair.second : pair.first;
    NodeId b = pair.other(a);
    w.probe(a, b, [&, pair, a, b](const ike::SetupRecord& rec) {
      ++r.setups;
      if (!rec.ok()) {
        ++r.failed;
      } else {
        ++r.by_path[rec.path];
        auto& da = w.daemon(a);
        auto& db = w.daemon(b);
        const auto* sa = da.sa(rec.sa_id);
        const auto* sb = db.sa(rec.sa_id);
        if (!sa || !sb || sa->key_schedule.ppk != sb->key_schedule.ppk || !sa->key_schedule.ppk) ++r.ppk_mismatches;
        if (!sa || !sb || sa->key_schedule.sk_d != sb->key_schedule.sk_d) ++r.sk_d_mismatches;
        if (sa && sb) {
          for (std::size_t k = 0; k < packets_per_sa; ++k) {
            Bytes msg = to_bytes(rec.sa_id + "/" + std::to_string(k));
            try {
              if (db.unprotect(da.protect_on(rec.sa_id, msg)) != msg) ++r.decrypt_failures;
              if (da.unprotect(db.protect_on(rec.sa_id, msg)) != msg) ++r.decrypt_failures;
            } catch (const Error&) {
              ++r.decrypt_failures;
            }
            r.packets += 2;
          }
        }
      }
      if (issued[pair] < setups_per_pair)
        next(pair);
      else
        ++done_pairs;
    });
  };
  if (setups_per_pair > 0)
    for (const auto& p : pairs) next(p);
  while (setups_per_pair > 0 && done_pairs < pairs.size() && w.loop().step()) {
  }
  return r;
}

}  // namespace qsvpn::harness
