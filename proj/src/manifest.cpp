#include "mgtraj/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mgtraj/common.hpp"

namespace mgtraj {

namespace fs = std::filesystem;

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t h) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64_str(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hex16(std::uint64_t h) {
  std::ostringstream out;
  out << std::hex;
  for (int shift = 60; shift >= 0; shift -= 4) out << ((h >> shift) & 0xF);
  return out.str();
}

std::string dataset_content_hash(const std::string& dir) {
  static const char* kFiles[] = {"trajectories.csv", "occupancy.pgm", "occupancy.json",
                                 "gt_index.json"};
  std::uint64_t h = 0xcbf29ce484222325ULL;
  bool any = false;
  for (const char* name : kFiles) {
    const fs::path p = fs::path(dir) / name;
    std::ifstream in(p, std::ios::binary);
    if (!in) continue;
    any = true;
    h = fnv1a64(name, std::string(name).size(), h);
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
      h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    }
  }
  if (!any) throw IoError("dataset directory " + dir + " has no dataset files to hash");
  return hex16(h);
}

void write_experiment_manifest(const ExperimentManifest& m, const std::string& path) {
  nlohmann::json j;
  j["command"] = m.command;
  j["config_hash"] = m.config_hash;
  j["seed"] = m.seed;
  j["dataset_path"] = m.dataset_path;
  j["dataset_hash"] = m.dataset_hash;
  j["checkpoint_path"] = m.checkpoint_path;
  j["tool_version"] = m.tool_version;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write experiment manifest " + path);
  out << j.dump(2) << "\n";
}

}  // namespace mgtraj
