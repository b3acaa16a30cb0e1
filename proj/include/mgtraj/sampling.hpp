#pragma once

#include <array>
#include <string>
#include <vector>

#include "mgtraj/model.hpp"
#include "mgtraj/rng.hpp"

namespace mgtraj::net {

enum class Strategy { random, expectation };
Strategy strategy_from_string(const std::string& s);
std::string to_string(Strategy s);

// k i.i.d. categorical draws over π.
std::vector<int> sample_random(const std::vector<double>& pi, int k, Rng& rng);

// Deterministic per-generator counts: n_g = round(k·π_g) half away from zero,
// then the highest-π generator absorbs the rounding difference; if that would
// drive its count negative it is clamped to 0 and the leftover deficit
// cascades to the next-highest π. No RNG is consumed.
std::vector<int> sample_expectation(const std::vector<double>& pi, int k);

struct Prediction {
  std::array<Vec2, kPred> positions{};
  int generator_id = 0;       // code index for models with a latent code
  double pi_value = 0.0;      // π of the producing generator at generation time
  std::uint64_t noise_seed = 0;
};

struct PredictionSet {
  std::vector<Prediction> trajectories;
  std::vector<double> pi;     // π over generators for this record
};

// Encodes once, evaluates π once, allocates generator invocations per the
// strategy, and rolls each trajectory with a fresh noise seed recorded in the
// result. `in` must describe exactly one record (make_single / 1-row batch).
PredictionSet predict(const Model& m, const BatchInputs& in, int k, Strategy strategy,
                      Rng& rng);

}  // namespace mgtraj::net
