#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "converge/verdict.hpp"

namespace converge {

inline constexpr const char* kToolName = "converge";
inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kReportSchema = "converge-report-v1";

// Flat key = value configuration; later assignments win. '#' starts a comment.
struct ConfigMap {
  std::map<std::string, std::string> kv;

  static ConfigMap parse_text(const std::string& text);
  static ConfigMap load_file(const std::string& path);

  void set(const std::string& key, const std::string& value) { kv[key] = value; }
  const std::string* get(const std::string& key) const {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  }
};

struct RunResult {
  nlohmann::json report;
  int exit_code = 0;  // 0 ok/match, 1 mismatch or failed certification, 2 usage
  // Envelope / reference CSVs and plot scripts keyed by file name; written by
  // the caller next to the report (or embedded when no output path is set).
  std::map<std::string, std::string> side_files;
};

// Runs the configured analysis end to end. Configuration layering: built-in
// defaults, then the registry's per-property defaults for builtin systems,
// then `cfg`. Throws ConfigError / ParseError for unusable configs (exit 2
// at the CLI); analysis-level errors are embedded in the report section.
RunResult run_analysis(const ConfigMap& cfg);

nlohmann::json verdict_to_json(const Verdict& v);

// FNV-1a over the canonical dump with the timing and hash fields removed;
// byte-identical reports across thread counts hash equal.
std::string report_hash(const nlohmann::json& report);

// Structural check against the v1 report shape (docs/report.schema.v1.json).
bool validate_report(const nlohmann::json& report, std::string* why = nullptr);

std::string gnuplot_script(const std::string& envelope_csv_name);

}  // namespace converge
