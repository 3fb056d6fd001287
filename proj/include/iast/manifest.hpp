#pragma once

// Run manifest: ties a run directory to the exact config that produced it.
// Timestamps live here and nowhere else, so every other artifact is a pure
// function of the config.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "iast/config.hpp"

namespace iast {

inline constexpr const char* kToolVersion = "0.3.0";

struct RunManifest {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  std::string started_at;
  std::string finished_at;
  std::vector<std::string> artifacts;  // relative to the run directory
  std::string status = "running";
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string artifact_key(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "artifact.%05zu", i);
  return buf;
}

inline void save_manifest(const fs::path& dir, const RunManifest& m) {
  FlatConfig f;
  f.set("config_hash", hex64(m.config_hash));
  f.set("seed", m.seed);
  f.set("tool_version", m.tool_version);
  f.set("started_at", m.started_at);
  f.set("finished_at", m.finished_at);
  f.set("status", m.status);
  f.set("artifact_count", static_cast<std::uint64_t>(m.artifacts.size()));
  for (std::size_t i = 0; i < m.artifacts.size(); ++i) f.set(artifact_key(i), m.artifacts[i]);
  f.save(dir / "manifest.txt");
}

inline RunManifest load_manifest(const fs::path& dir) {
  const auto f = FlatConfig::load(dir / "manifest.txt");
  RunManifest m;
  m.config_hash = std::stoull(f.require("config_hash"), nullptr, 16);
  m.seed = f.get_u64("seed");
  m.tool_version = f.require("tool_version");
  m.started_at = f.get("started_at", "");
  m.finished_at = f.get("finished_at", "");
  m.status = f.get("status", "");
  const auto n = f.get_u64("artifact_count", 0);
  for (std::size_t i = 0; i < n; ++i) m.artifacts.push_back(f.require(artifact_key(i)));
  return m;
}

/// Re-hashes the config snapshot next to the manifest.
inline bool manifest_matches_snapshot(const fs::path& dir) {
  const auto m = load_manifest(dir);
  const auto cfg = config_from_flat(FlatConfig::load(dir / "config.txt"));
  return config_hash(cfg) == m.config_hash && cfg.seed == m.seed;
}

/// Files under `dir` (recursive, sorted), excluding the manifest itself.
inline std::vector<std::string> list_artifacts(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) {
      auto rel = fs::relative(e.path(), dir).generic_string();
      if (rel != "manifest.txt") out.push_back(rel);
    }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace iast
