#include "qsvpn/harness/report.hpp"

#include <fstream>
#include <sstream>

#include "qsvpn/common/crypto.hpp"
#include "qsvpn/common/error.hpp"

namespace qsvpn::harness {

namespace {

std::string header(const std::string& table, const std::string& columns) {
  return "# qsvpn " + table + " schema=" + std::to_string(kCsvSchemaVersion) + "\n" + columns + "\n";
}

std::string fixed(double v, int decimals = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(decimals);
  os << v;
  return os.str();
}

}  // namespace

std::string sa_setups_csv(const ScenarioResult& r) {
  std::string out = header("sa_setups",
                           "sa_id,initiator,responder,mode,kind,started_at_ms,t_sa_init_ms,t_get_key_ms,t_ike_auth_ms,"
                           "total_ms,source,path,technology,ppk_id,replaces,status");
  for (const auto& s : r.setups) {
    out += s.sa_id + "," + s.initiator.value + "," + s.responder.value + "," + std::string(ike::to_string(s.mode)) + "," +
           std::string(ike::to_string(s.kind)) + "," + format_ms(s.started_at) + "," + format_ms(s.latency.t_sa_init) +
           "," + format_ms(s.latency.t_get_key) + "," + format_ms(s.latency.t_ike_auth) + "," +
           format_ms(s.latency.total()) + "," + s.source + "," + s.path + "," + s.technology + "," +
           (s.ppk_id ? s.ppk_id->hex() : "-") + "," + (s.replaces.empty() ? "-" : s.replaces) + "," + s.status() + "\n";
  }
  return out;
}

std::string switch_actions_csv(const ScenarioResult& r) {
  std::string out = header("switch_actions", "at_ms,pair,from,to,reason");
  for (const auto& a : r.switches)
    out += format_ms(a.at) + "," + a.pair.label() + "," + std::string(sdn::to_string(a.from)) + "," +
           std::string(sdn::to_string(a.to)) + "," + std::string(sdn::to_string(a.reason)) + "\n";
  return out;
}

std::string buffers_csv(const ScenarioResult& r) {
  std::string out = header("buffers", "at_ms,node,source,available_bits");
  for (const auto& b : r.buffers)
    out += format_ms(b.at) + "," + b.node.value + "," + b.source + "," + std::to_string(b.available_bits) + "\n";
  return out;
}

std::string hop_events_csv(const ScenarioResult& r) {
  std::string out = header("hop_events", "at_ms,src,dst,from_hops,to_hops");
  for (const auto& h : r.hops)
    out += format_ms(h.at) + "," + h.src.value + "," + h.dst.value + "," + std::to_string(h.from_hops) + "," +
           std::to_string(h.to_hops) + "\n";
  return out;
}

std::string summary_csv(const ScenarioResult& r) {
  std::string out = header("summary", "metric,value");
  auto row = [&](const std::string& k, const std::string& v) { out += k + "," + v + "\n"; };
  auto num = [&](const std::string& k, std::uint64_t v) { row(k, std::to_string(v)); };
  row("scenario", r.scenario);
  num("seed", r.seed);
  row("ended_at_ms", format_ms(r.ended_at));
  num("sa_setups", r.setups.size());
  num("sa_setups_failed", r.counters.setups_failed);
  num("rekeys_ok", r.counters.rekeys_ok);
  num("agreement_checks", r.counters.agreement_checks);
  num("switch_actions", r.switches.size());
  num("packets_sent", r.overlay.sent);
  num("packets_delivered", r.overlay.delivered);
  num("packets_via_hub", r.overlay.via_hub);
  num("packets_direct", r.overlay.direct);
  num("packets_no_route", r.counters.no_route);
  num("decrypt_failures", r.overlay.decrypt_failures);
  num("replayed", r.overlay.replayed);
  num("dropped_no_sa", r.overlay.no_sa_drops);
  num("transport_lost", r.overlay.transport_lost);
  num("pqc_establishments", r.counters.pqc_establishments);
  for (const auto& e : r.events) row("event_" + std::string(to_string(e.kind)) + "_" + e.target, format_ms(e.at));
  return out;
}

std::map<std::string, std::string> render_report(const ScenarioResult& r) {
  return {{"sa_setups.csv", sa_setups_csv(r)},
          {"switch_actions.csv", switch_actions_csv(r)},
          {"buffers.csv", buffers_csv(r)},
          {"hop_events.csv", hop_events_csv(r)},
          {"summary.csv", summary_csv(r)}};
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << content;
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

std::vector<std::filesystem::path> emit_report(const ScenarioResult& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> out;
  for (const auto& [name, content] : render_report(r)) {
    write_file(dir / name, content);
    out.push_back(dir / name);
  }
  return out;
}

std::string report_checksums(const std::map<std::string, std::string>& tables) {
  std::string out;
  for (const auto& [name, content] : tables) out += name + " " + to_hex(crypto::sha512(to_bytes(content))) + "\n";
  return out;
}

std::string measure_csv(const std::vector<MeasureResult>& results) {
  std::string out = header("measure",
                           "initiator,responder,mode,runs,failed,mean_t_sa_init_ms,mean_t_get_key_ms,mean_t_ike_auth_ms,"
                           "mean_total_ms,var_total_ms2");
  for (const auto& m : results)
    out += m.initiator.value + "," + m.responder.value + "," + std::string(to_string(m.mode)) + "," +
           std::to_string(m.runs) + "," + std::to_string(m.failed) + "," + fixed(m.sa_init.mean_ms) + "," +
           fixed(m.get_key.mean_ms) + "," + fixed(m.ike_auth.mean_ms) + "," + fixed(m.total.mean_ms) + "," +
           fixed(m.total.variance_ms2) + "\n";
  return out;
}

std::string latency_svg(const std::vector<MeasureResult>& results) {
  const int bar = 36, gap = 14, left = 70, top = 30, height = 320;
  double max_ms = 1.0;
  for (const auto& m : results) max_ms = std::max(max_ms, m.total.mean_ms);
  int width = left + static_cast<int>(results.size()) * (bar + gap) + 40;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height + top + 90 << "\">\n";
  s << "<text x=\"" << left << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">Mean SA setup time (ms)</text>\n";
  int x = left;
  for (const auto& m : results) {
    double scale = height / max_ms;
    int y = top + height;
    const std::pair<double, const char*> parts[] = {
        {m.sa_init.mean_ms, "#4c78a8"}, {m.get_key.mean_ms, "#f58518"}, {m.ike_auth.mean_ms, "#54a24b"}};
    for (const auto& [v, color] : parts) {
      int h = static_cast<int>(v * scale + 0.5);
      y -= h;
      s << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar << "\" height=\"" << h << "\" fill=\"" << color << "\"/>\n";
    }
    s << "<text x=\"" << x << "\" y=\"" << y - 4 << "\" font-family=\"sans-serif\" font-size=\"10\">" << fixed(m.total.mean_ms, 1)
      << "</text>\n";
    s << "<text transform=\"translate(" << x + bar / 2 << "," << top + height + 8 << ") rotate(60)\" font-family=\"sans-serif\" "
      << "font-size=\"10\">" << m.initiator.value << "-" << m.responder.value << " " << to_string(m.mode) << "</text>\n";
    x += bar + gap;
  }
  s << "<text x=\"4\" y=\"" << top + 12 << "\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#4c78a8\">SA_INIT</text>\n";
  s << "<text x=\"4\" y=\"" << top + 26 << "\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#f58518\">GET_KEY</text>\n";
  s << "<text x=\"4\" y=\"" << top + 40 << "\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#54a24b\">IKE_AUTH</text>\n";
  s << "</svg>\n";
  return s.str();
}

}  // namespace qsvpn::harness
