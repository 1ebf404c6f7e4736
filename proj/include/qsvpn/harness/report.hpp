#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "qsvpn/harness/world.hpp"

namespace qsvpn::harness {

inline constexpr int kCsvSchemaVersion = 1;

// Each CSV starts with "# qsvpn <table> schema=1", then a column header.
std::string sa_setups_csv(const ScenarioResult& r);
std::string switch_actions_csv(const ScenarioResult& r);
std::string buffers_csv(const ScenarioResult& r);
std::string hop_events_csv(const ScenarioResult& r);
std::string summary_csv(const ScenarioResult& r);

// File name -> contents, for every table above.
std::map<std::string, std::string> render_report(const ScenarioResult& r);
// Writes the tables into `dir` (created if needed). IoError on failure.
std::vector<std::filesystem::path> emit_report(const ScenarioResult& r, const std::filesystem::path& dir);
// "<file> <sha512 hex>" per table, sorted by file name.
std::string report_checksums(const std::map<std::string, std::string>& tables);

std::string measure_csv(const std::vector<MeasureResult>& results);
// Grouped bar chart of mean totals per pair and mode.
std::string latency_svg(const std::vector<MeasureResult>& results);

void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace qsvpn::harness
