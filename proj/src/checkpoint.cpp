#include "mgtraj/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mgtraj::net {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_f32_le(std::ostream& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  const char bytes[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                         static_cast<char>((bits >> 16) & 0xFF),
                         static_cast<char>((bits >> 24) & 0xFF)};
  out.write(bytes, 4);
}

float read_f32_le(std::istream& in) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (!in) throw IoError("params.bin: unexpected end of file");
  const std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) |
                             (static_cast<std::uint32_t>(bytes[1]) << 8) |
                             (static_cast<std::uint32_t>(bytes[2]) << 16) |
                             (static_cast<std::uint32_t>(bytes[3]) << 24);
  return std::bit_cast<float>(bits);
}

std::string hash_hex(std::uint64_t h) {
  std::ostringstream out;
  out << std::hex;
  for (int shift = 60; shift >= 0; shift -= 4) out << ((h >> shift) & 0xF);
  return out.str();
}

}  // namespace

void save_checkpoint(const Model& m, const std::string& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format_version"] = 1;
  manifest["tool_version"] = kToolVersion;
  manifest["model"] = {{"kind", to_string(m.cfg.kind)},
                       {"n_G", m.cfg.n_gens},
                       {"z_dim", m.cfg.z_dim},
                       {"code_dim", m.cfg.code_dim}};
  manifest["config_hash"] = hash_hex(config_hash(m.cfg));

  json tensors = json::array();
  std::size_t offset = 0;
  for (const nn::Param* p : m.params.all()) {
    tensors.push_back({{"name", p->name},
                       {"shape", p->value.shape},
                       {"dtype", "f32"},
                       {"offset", offset}});
    offset += 4 * p->value.numel();
  }
  manifest["tensors"] = std::move(tensors);

  {
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw IoError("cannot write " + dir + "/manifest.json");
    out << manifest.dump(2) << "\n";
  }
  std::ofstream bin(fs::path(dir) / "params.bin", std::ios::binary);
  if (!bin) throw IoError("cannot write " + dir + "/params.bin");
  for (const nn::Param* p : m.params.all()) {
    for (double v : p->value.data) write_f32_le(bin, static_cast<float>(v));
  }
  if (!bin) throw IoError("write failure on " + dir + "/params.bin");
}

Model load_checkpoint(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw IoError("cannot open " + dir + "/manifest.json");
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw IoError("manifest.json: " + std::string(e.what()));
  }
  if (manifest.value("format_version", -1) != 1) {
    throw IoError("manifest.json: unsupported format_version");
  }
  ModelConfig cfg;
  try {
    const auto& mj = manifest.at("model");
    cfg.kind = model_kind_from_string(mj.at("kind").get<std::string>());
    cfg.n_gens = mj.at("n_G").get<int>();
    cfg.z_dim = mj.at("z_dim").get<int>();
    cfg.code_dim = mj.at("code_dim").get<int>();
  } catch (const json::exception& e) {
    throw IoError("manifest.json: " + std::string(e.what()));
  }
  Model m = Model::build(cfg, 0);
  if (manifest.value("config_hash", "") != hash_hex(config_hash(cfg))) {
    throw ConfigError("checkpoint config hash mismatch in " + dir);
  }

  const auto params = m.params.all();
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != params.size()) {
    throw ConfigError("checkpoint lists " + std::to_string(tensors.size()) + " tensors, model has " +
                      std::to_string(params.size()));
  }
  std::ifstream bin(fs::path(dir) / "params.bin", std::ios::binary);
  if (!bin) throw IoError("cannot open " + dir + "/params.bin");
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors.at(i);
    if (t.at("name").get<std::string>() != params[i]->name) {
      throw ConfigError("checkpoint tensor '" + t.at("name").get<std::string>() +
                        "' does not match model tensor '" + params[i]->name + "'");
    }
    if (t.at("shape").get<std::vector<std::size_t>>() != params[i]->value.shape) {
      throw ConfigError("checkpoint tensor '" + params[i]->name + "' has mismatched shape");
    }
    if (t.at("dtype").get<std::string>() != "f32") {
      throw ConfigError("checkpoint tensor '" + params[i]->name + "' has unsupported dtype");
    }
    if (t.at("offset").get<std::size_t>() != offset) {
      throw ConfigError("checkpoint tensor '" + params[i]->name + "' has unexpected offset");
    }
    for (double& v : params[i]->value.data) v = static_cast<double>(read_f32_le(bin));
    offset += 4 * params[i]->value.numel();
  }
  bin.peek();
  if (!bin.eof()) throw IoError("params.bin has trailing bytes beyond the manifest layout");
  return m;
}

}  // namespace mgtraj::net
