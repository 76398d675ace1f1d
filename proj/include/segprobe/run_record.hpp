#pragma once

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

namespace segprobe {

/// Provenance record written as run.json next to every subcommand's outputs.
struct RunRecord {
  std::string subcommand;
  std::vector<std::string> command_line;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json seeds = nlohmann::json::object();
  std::string store_hash;
  std::vector<std::string> outputs;
  nlohmann::json details = nlohmann::json::object();
  std::chrono::system_clock::time_point started = std::chrono::system_clock::now();
  std::chrono::steady_clock::time_point clock = std::chrono::steady_clock::now();

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& dir) const;
};

/// "<semver>+<git describe>" of this build.
std::string artifact_version();

}  // namespace segprobe
