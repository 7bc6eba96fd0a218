#pragma once

// Run manifests: one JSON object per run, appended to a JSONL file.
// The run id is a content hash of the run's inputs, so reports that cite it
// stay byte-identical across reruns; timestamps live only in the manifest.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "interprompt/hashing.hpp"

namespace interprompt {

struct RunCounts {
  std::size_t total = 0;
  std::size_t parsed = 0;       // exact parses
  std::size_t repaired = 0;     // parsed with repairs
  std::size_t unparseable = 0;  // includes failed requests
  std::size_t failed = 0;       // transport/service failures (subset of unparseable)
};

struct RunManifest {
  std::string run_id;
  std::string command;
  std::string created_at;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::map<std::string, std::string> input_hashes;  // path -> sha256
  std::string template_hash;
  std::string model_id;
  std::vector<std::string> job_ids;
  RunCounts counts;

  /// Derives run_id from command, config, inputs and template.
  void assign_run_id() {
    nlohmann::ordered_json key;
    key["command"] = command;
    key["config"] = config;
    key["inputs"] = input_hashes;
    key["template_hash"] = template_hash;
    key["model_id"] = model_id;
    run_id = sha256_hex(key.dump()).substr(0, 16);
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["run_id"] = run_id;
    j["command"] = command;
    j["created_at"] = created_at;
    j["config"] = config;
    j["input_hashes"] = input_hashes;
    j["template_hash"] = template_hash;
    j["model_id"] = model_id;
    j["job_ids"] = job_ids;
    j["counts"] = {{"total", counts.total},
                   {"parsed", counts.parsed},
                   {"repaired", counts.repaired},
                   {"unparseable", counts.unparseable},
                   {"failed", counts.failed}};
    return j;
  }
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Appends one line; existing entries are never rewritten.
inline void append_manifest(const std::filesystem::path& path, const RunManifest& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot open manifest for append: " + path.string());
  out << m.to_json().dump() << '\n';
}

inline std::vector<nlohmann::json> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest not found: " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace interprompt
