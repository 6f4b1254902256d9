#include "ctxmt/manifest.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ctxmt/error.hpp"
#include "ctxmt/rng.hpp"

namespace ctxmt {

std::uint64_t hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot hash missing file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return fnv1a64(buf.str());
}

std::string hex64_string(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex;
  for (int shift = 60; shift >= 0; shift -= 4) out << ((v >> shift) & 0xF);
  return out.str();
}

void RunManifest::add_input(const std::filesystem::path& path) {
  input_hashes[path.string()] = hex64_string(hash_file(path));
}

void RunManifest::add_artifact(const std::filesystem::path& path) {
  artifacts.push_back(path.string());
}

std::string RunManifest::serialize() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["tool_version"] = tool_version;
  j["seed"] = seed;
  j["config"] = config;          // std::map: keys sorted, deterministic
  j["input_hashes"] = input_hashes;
  j["artifacts"] = artifacts;
  return j.dump(2) + "\n";
}

std::filesystem::path RunManifest::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  const auto path = dir / (command + ".manifest.json");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  out << serialize();
  return path;
}

}  // namespace ctxmt
