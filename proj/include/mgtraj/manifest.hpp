#pragma once

#include <cstdint>
#include <string>

namespace mgtraj {

// Provenance record written next to every command's outputs so a result can
// name the exact configuration, seed, and data that produced it.
struct ExperimentManifest {
  std::string command;
  std::string config_hash;      // 16 hex digits
  std::uint64_t seed = 0;
  std::string dataset_path;
  std::string dataset_hash;     // 16 hex digits over the dataset files
  std::string checkpoint_path;  // empty when not applicable
  std::string tool_version;
};

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64_str(const std::string& s);
std::string hex16(std::uint64_t h);

// Hash of a dataset directory: file contents of the known dataset files in a
// fixed name order. Throws IoError when the directory is unreadable.
std::string dataset_content_hash(const std::string& dir);

void write_experiment_manifest(const ExperimentManifest& m, const std::string& path);

}  // namespace mgtraj
