#include "mgtraj/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mgtraj::net {

Strategy strategy_from_string(const std::string& s) {
  if (s == "random") return Strategy::random;
  if (s == "expectation") return Strategy::expectation;
  throw ConfigError("unknown sampling strategy '" + s + "'");
}

std::string to_string(Strategy s) {
  return s == Strategy::random ? "random" : "expectation";
}

namespace {
void check_simplex(const std::vector<double>& pi) {
  if (pi.empty()) throw ConfigError("empty probability vector");
  double total = 0.0;
  for (double p : pi) {
    if (!(p >= 0.0)) throw NumericError("probability vector has negative or NaN entries");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw NumericError("probability vector does not sum to 1");
  }
}
}  // namespace

std::vector<int> sample_random(const std::vector<double>& pi, int k, Rng& rng) {
  check_simplex(pi);
  if (k < 1) throw ConfigError("sample_random: k must be >= 1");
  std::vector<int> out(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = static_cast<int>(rng.categorical(pi));
  return out;
}

std::vector<int> sample_expectation(const std::vector<double>& pi, int k) {
  check_simplex(pi);
  if (k < 1) throw ConfigError("sample_expectation: k must be >= 1");
  const std::size_t n = pi.size();
  std::vector<long long> counts(n);
  long long sum = 0;
  for (std::size_t g = 0; g < n; ++g) {
    counts[g] = std::llround(static_cast<double>(k) * pi[g]);  // half away from zero
    sum += counts[g];
  }
  long long remaining = static_cast<long long>(k) - sum;

  // Highest π first; ties broken by lowest index.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pi[a] > pi[b]; });
  for (std::size_t g : order) {
    if (remaining == 0) break;
    const long long adjusted = counts[g] + remaining;
    if (adjusted < 0) {
      remaining = adjusted;  // leftover deficit moves to the next generator
      counts[g] = 0;
    } else {
      counts[g] = adjusted;
      remaining = 0;
    }
  }
  if (remaining != 0) throw NumericError("sample_expectation: could not place all samples");
  std::vector<int> out(n);
  for (std::size_t g = 0; g < n; ++g) out[g] = static_cast<int>(counts[g]);
  return out;
}

PredictionSet predict(const Model& m, const BatchInputs& in, int k, Strategy strategy,
                      Rng& rng) {
  if (k < 1) throw ConfigError("predict: k must be >= 1");
  if (in.b != 1) throw DimensionError("predict: inputs must describe exactly one record");

  nn::Tape tp;
  auto cond = condition_forward(tp, m.enc, in, false);
  auto pi_var = pm_forward_var(tp, m, cond.c, false);
  PredictionSet set;
  set.pi = tp.val(pi_var).data;

  std::vector<int> gen_of;
  gen_of.reserve(static_cast<std::size_t>(k));
  if (strategy == Strategy::random) {
    gen_of = sample_random(set.pi, k, rng);
  } else {
    const std::vector<int> counts = sample_expectation(set.pi, k);
    for (std::size_t g = 0; g < counts.size(); ++g) {
      for (int c = 0; c < counts[g]; ++c) gen_of.push_back(static_cast<int>(g));
    }
  }

  const std::size_t zd = static_cast<std::size_t>(m.cfg.z_dim);
  const std::size_t cd = static_cast<std::size_t>(m.cfg.code_dim);
  set.trajectories.reserve(static_cast<std::size_t>(k));
  for (int t = 0; t < k; ++t) {
    const int g = gen_of[static_cast<std::size_t>(t)];
    Prediction p;
    p.noise_seed = rng.next_u64();
    Rng zr(p.noise_seed);
    nn::Tensor z({1, zd + cd});
    for (std::size_t i = 0; i < zd; ++i) z.data[i] = zr.normal();
    int code = 0;
    if (cd > 0) {
      code = static_cast<int>(zr.uniform_int(cd));
      z.data[zd + static_cast<std::size_t>(code)] = 1.0;
    }
    nn::Var disp = decode_group(tp, m, g, false, cond.c, z, in.last_disp);
    nn::Var pos = displacements_to_positions(tp, disp, in.last_pos);
    const nn::Tensor& pv = tp.val(pos);
    for (std::size_t step = 0; step < kPred; ++step) {
      p.positions[step] = {pv.data[2 * step], pv.data[2 * step + 1]};
    }
    p.generator_id = cd > 0 ? code : g;
    p.pi_value = cd > 0 ? 1.0 / static_cast<double>(cd) : set.pi[static_cast<std::size_t>(g)];
    set.trajectories.push_back(p);
  }
  return set;
}

}  // namespace mgtraj::net
