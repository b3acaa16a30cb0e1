#pragma once

#include <string>

#include "mgtraj/model.hpp"

namespace mgtraj::net {

// Writes `manifest.json` (model config, config hash, tensor table with
// name/shape/dtype/offset) and `params.bin` (little-endian f32, concatenated
// in manifest order) into `dir`, creating it if needed.
void save_checkpoint(const Model& m, const std::string& dir);

// Rebuilds the model from `dir` and loads its weights, re-widened to f64.
// Throws IoError on missing/corrupt files and ConfigError when the manifest
// disagrees with the reconstructed architecture.
Model load_checkpoint(const std::string& dir);

}  // namespace mgtraj::net
