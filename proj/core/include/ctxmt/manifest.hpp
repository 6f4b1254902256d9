#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ctxmt {

inline constexpr const char* kToolVersion = "0.1.0";

// Reproducibility record written beside every command's outputs. Contains no
// timestamps: equal configurations produce byte-equal manifests.
struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;  // resolved flag/config union
  std::uint64_t seed = 0;
  std::map<std::string, std::string> input_hashes;  // path -> fnv1a64 hex
  std::vector<std::string> artifacts;
  std::string tool_version = kToolVersion;

  void add_input(const std::filesystem::path& path);
  void add_artifact(const std::filesystem::path& path);

  std::string serialize() const;
  // Writes <command>.manifest.json into `dir`.
  std::filesystem::path write(const std::filesystem::path& dir) const;
};

std::uint64_t hash_file(const std::filesystem::path& path);
std::string hex64_string(std::uint64_t v);

}  // namespace ctxmt
