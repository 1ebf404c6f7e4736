// qsvpn: command-line front end for the hybrid quantum-safe VPN simulator.
//
// Exit codes: 0 ok, 1 usage, 2 configuration error, 3 scenario panic, 4 I/O error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "qsvpn/common/error.hpp"
#include "qsvpn/etsi/http_server.hpp"
#include "qsvpn/harness/config.hpp"
#include "qsvpn/harness/report.hpp"
#include "qsvpn/harness/world.hpp"

namespace fs = std::filesystem;
using namespace qsvpn;
using namespace qsvpn::harness;

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kPanic = 3, kIo = 4 };

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::ScenarioPanic: return kPanic;
    case ErrorCode::IoError: return kIo;
    default: return kConfig;
  }
}

TopologyConfig load(const std::string& scenario, std::optional<std::uint64_t> seed) {
  TopologyConfig c = load_topology(resolve_scenario(scenario));
  if (seed) c.seed = *seed;
  return c;
}

std::pair<NodeId, NodeId> parse_pair(const std::string& s) {
  auto colon = s.find(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == s.size())
    fail(ErrorCode::SchemaError, "pair must look like INITIATOR:RESPONDER, got " + s);
  return {s.substr(0, colon), s.substr(colon + 1)};
}

int cmd_validate(const std::string& path) {
  TopologyConfig c = load_topology(resolve_scenario(path));
  std::cout << "ok: " << c.name << " (schema " << c.schema_version << ")\n";
  std::cout << "  nodes: " << c.nodes.size() << ", hub: " << c.hub().value << ", QKD links: " << c.qkd_links.size()
            << ", transport links: " << c.transport_links.size() << ", scripted events: " << c.events.size() << "\n";
  for (const NodeId& s : c.spokes()) {
    sim::EventLoop loop;
    sim::Transport t(loop, 0);
    for (const auto& l : c.transport_links) t.add_link(l);
    std::cout << "  " << c.hub().value << "-" << s.value << " RTT " << format_ms(t.nominal_delay(c.hub(), s) * 2) << " ms\n";
  }
  return kOk;
}

int cmd_run(const std::string& scenario, std::optional<std::uint64_t> seed, std::optional<double> duration_s,
            const std::string& mode, const std::string& out, bool checksums) {
  TopologyConfig c = load(scenario, seed);
  WorldOptions o;
  if (!mode.empty()) o.mode = ike::ike_mode_from_string(mode);
  std::optional<SimDuration> d;
  if (duration_s) d = from_s(*duration_s);
  ScenarioResult r = run_scenario(c, d, o);
  auto files = emit_report(r, out);
  std::cout << summary_csv(r);
  for (const auto& f : files) std::cout << "wrote " << f.string() << "\n";
  if (checksums) {
    std::string sums = report_checksums(render_report(r));
    write_file(fs::path(out) / "checksums.txt", sums);
    std::cout << sums;
  }
  return kOk;
}

int cmd_measure(const std::string& scenario, std::optional<std::uint64_t> seed, std::vector<std::string> pairs,
                std::vector<std::string> modes, std::size_t runs, const std::string& out) {
  TopologyConfig c = load(scenario, seed);
  if (pairs.empty())
    for (const NodeId& s : c.spokes()) pairs.push_back(c.hub().value + ":" + s.value);
  if (modes.empty()) modes = {"ECDH_ONLY", "PPK"};
  std::vector<MeasureResult> results;
  for (const auto& p : pairs) {
    auto [a, b] = parse_pair(p);
    c.node(a);
    c.node(b);
    for (const auto& m : modes) results.push_back(measure_sa_setup(c, a, b, measure_mode_from_string(m), runs));
  }
  std::string csv = measure_csv(results);
  std::cout << csv;
  if (!out.empty()) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) fail(ErrorCode::IoError, "cannot create " + out);
    write_file(fs::path(out) / "measure.csv", csv);
    write_file(fs::path(out) / "latency.svg", latency_svg(results));
  }
  return kOk;
}

// Summarizes an emitted sa_setups.csv: mean phase times per pair, mode and source.
int cmd_report(const std::string& dir) {
  fs::path p = fs::path(dir) / "sa_setups.csv";
  std::ifstream in(p);
  if (!in) fail(ErrorCode::IoError, "cannot open " + p.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("# qsvpn sa_setups schema=", 0) != 0) fail(ErrorCode::SchemaError, p.string() + " is not an sa_setups table");
  if (line != "# qsvpn sa_setups schema=" + std::to_string(kCsvSchemaVersion))
    fail(ErrorCode::SchemaError, "unsupported table version: " + line);
  std::getline(in, line);
  struct Acc {
    std::size_t n = 0, failed = 0;
    double init = 0, key = 0, auth = 0, total = 0;
  };
  std::map<std::string, Acc> groups;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 16) fail(ErrorCode::SchemaError, "malformed row: " + line);
    NodePair pair(f[1], f[2]);
    std::string key = pair.label() + " " + f[3] + " " + f[10];
    Acc& a = groups[key];
    if (f[15] != "READY") {
      ++a.failed;
      continue;
    }
    ++a.n;
    a.init += std::stod(f[6]);
    a.key += std::stod(f[7]);
    a.auth += std::stod(f[8]);
    a.total += std::stod(f[9]);
  }
  std::printf("%-24s %6s %6s %12s %12s %12s %12s\n", "pair mode source", "n", "failed", "sa_init_ms", "get_key_ms",
              "ike_auth_ms", "total_ms");
  for (const auto& [k, a] : groups) {
    double n = a.n ? static_cast<double>(a.n) : 1.0;
    std::printf("%-24s %6zu %6zu %12.3f %12.3f %12.3f %12.3f\n", k.c_str(), a.n, a.failed, a.init / n, a.key / n,
                a.auth / n, a.total / n);
  }
  return kOk;
}

// Serves ETSI 014/004 key delivery for the scenario's nodes over local HTTP,
// after the scenario has warmed up in simulated time.
int cmd_serve(const std::string& scenario, const std::string& host, int port, double warmup_s, bool check) {
  TopologyConfig c = load(scenario, std::nullopt);
  WorldOptions o;
  o.traffic = false;
  o.overlay_boot = false;
  o.scripted_events = false;
  World w(c, o);
  w.start();
  w.run_until(from_s(warmup_s));

  std::vector<std::unique_ptr<etsi::Etsi014Endpoint>> endpoints;
  etsi::Etsi004Service streams;
  etsi::EtsiHttpServer server;
  for (const NodeId& n : c.node_ids()) {
    endpoints.push_back(std::make_unique<etsi::Etsi014Endpoint>(w.store(n), w.directory(), &w.controller().peer_sync()));
    server.add_endpoint(*endpoints.back());
    streams.attach(w.store(n));
  }
  server.set_stream_service(streams);
  if (check) {
    int bound = server.start(host, 0);
    const auto& l = c.qkd_links.front();
    etsi::Etsi014Client client(l.a, etsi::http_transport(host, bound));
    auto st = client.status(l.b);
    auto keys = client.get_key(l.b, 1, 256);
    std::cout << "serving on " << host << ":" << bound << "\n" << st.to_json().dump() << "\n";
    std::cout << "delivered key_ID " << keys.keys.front().key_id.hex() << "\n";
    server.stop();
    return kOk;
  }
  std::cout << "serving ETSI 014/004 for " << c.nodes.size() << " nodes on " << host << ":" << port
            << " (caller identity in X-SAE-ID)" << std::endl;
  server.listen_blocking(host, port);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid quantum-safe VPN simulator"};
  app.require_subcommand(1);

  std::string scenario = "fieldtrial5";
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  std::string mode, out = "out";
  bool checksums = false;
  auto* run = app.add_subcommand("run", "Run a scenario and emit CSV reports");
  run->add_option("-s,--scenario", scenario, "Scenario name or path")->capture_default_str();
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("-d,--duration", duration, "Simulated seconds (default: scenario duration)");
  run->add_option("-m,--mode", mode, "IKE mode: PPK or ECDH_ONLY")->check(CLI::IsMember({"PPK", "ECDH_ONLY"}));
  run->add_option("-o,--out", out, "Output directory")->capture_default_str();
  run->add_flag("--checksums", checksums, "Also write SHA-512 checksums of every table");

  std::vector<std::string> pairs, modes;
  std::size_t runs = 50;
  std::string measure_out;
  auto* measure = app.add_subcommand("measure", "Back-to-back SA setups with latency decomposition");
  measure->add_option("-s,--scenario", scenario, "Scenario name or path")->capture_default_str();
  measure->add_option("--seed", seed, "Override the scenario seed");
  measure->add_option("-p,--pair", pairs, "INITIATOR:RESPONDER (repeatable; default every hub-spoke pair)");
  measure->add_option("-m,--mode", modes, "ECDH_ONLY, PPK, PPK_QKD or PPK_PQC (repeatable)")
      ->check(CLI::IsMember({"ECDH_ONLY", "PPK", "PPK_QKD", "PPK_PQC"}));
  measure->add_option("-n,--runs", runs, "Setups per pair and mode")->capture_default_str();
  measure->add_option("-o,--out", measure_out, "Write measure.csv and latency.svg here");

  std::string config_path;
  auto* validate = app.add_subcommand("validate-config", "Validate a scenario file");
  validate->add_option("config", config_path, "Scenario name or path")->required();

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Summarize the reports of a previous run");
  report->add_option("dir", report_dir, "Directory written by 'run'")->required();

  std::string host = "127.0.0.1";
  int port = 8014;
  double warmup = 30;
  bool check = false;
  auto* serve = app.add_subcommand("serve", "Serve ETSI key delivery over local HTTP");
  serve->add_option("-s,--scenario", scenario, "Scenario name or path")->capture_default_str();
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--warmup", warmup, "Simulated seconds of key generation before serving")->capture_default_str();
  serve->add_flag("--check", check, "Bind an ephemeral port, issue one request, exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*run) return cmd_run(scenario, seed, duration, mode, out, checksums);
    if (*measure) return cmd_measure(scenario, seed, pairs, modes, runs, measure_out);
    if (*validate) return cmd_validate(config_path);
    if (*report) return cmd_report(report_dir);
    if (*serve) return cmd_serve(scenario, host, port, warmup, check);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kPanic;
  }
  return kUsage;
}
