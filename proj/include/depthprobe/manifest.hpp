#pragma once

#include <ctime>
#include <fstream>
#include <string>

#include <json.hpp>

#include "depthprobe/errors.hpp"
#include "depthprobe/version.hpp"

namespace depthprobe {

// Every output directory gets exactly one of these. Re-running with the same
// command, config and seed reproduces the CSVs byte-for-byte; the manifest
// itself carries the (non-reproducible) timestamp.
struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string model_fingerprint;  // FNV-1a 64 of the .dpw file, empty if no model
  std::string tool_version = kVersion;
  std::string created_at;
};

inline std::string utc_timestamp() {
  std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

inline void write_manifest(const RunManifest& manifest, const std::string& dir) {
  nlohmann::json j{
      {"command", manifest.command},
      {"config", manifest.config},
      {"seed", manifest.seed},
      {"model_fingerprint", manifest.model_fingerprint},
      {"tool_version", manifest.tool_version},
      {"created_at", manifest.created_at.empty() ? utc_timestamp() : manifest.created_at},
  };
  const std::string path = dir + "/run_manifest.json";
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write manifest: " + path);
  out << j.dump(2) << '\n';
}

}  // namespace depthprobe
