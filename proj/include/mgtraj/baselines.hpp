#pragma once

#include <string>

#include "mgtraj/trainer.hpp"

namespace mgtraj::train {

// Rewrites a base config with the wiring a comparison model defines: forced
// generator counts, loss weights, and sample counts. Fields the kind does not
// constrain (epochs, seed, batch size, paths) pass through unchanged.
TrainConfig build_baseline(const std::string& kind, TrainConfig base);

}  // namespace mgtraj::train
