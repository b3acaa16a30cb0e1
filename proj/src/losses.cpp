#include "mgtraj/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mgtraj::train {

namespace {
constexpr double kProbFloor = 1e-12;

double clamped_log(double p) {
  return std::log(std::clamp(p, kProbFloor, 1.0 - kProbFloor));
}
}  // namespace

std::vector<double> pm_likelihood(
    const std::array<Vec2, kPred>& truth,
    const std::vector<std::vector<std::array<Vec2, kPred>>>& samples, double sigma) {
  if (sigma <= 0.0) throw ConfigError("pm_likelihood: sigma must be > 0");
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& per_gen : samples) {
    if (per_gen.empty()) throw ConfigError("pm_likelihood: every generator needs >= 1 sample");
    double acc = 0.0;
    for (const auto& sample : per_gen) {
      double sq_dist = 0.0;
      for (std::size_t t = 0; t < kPred; ++t) {
        if (!std::isfinite(sample[t].x) || !std::isfinite(sample[t].y)) {
          throw NumericError("pm_likelihood: non-finite sample trajectory");
        }
        sq_dist += sq(sample[t].x - truth[t].x) + sq(sample[t].y - truth[t].y);
      }
      acc += std::exp(-sq_dist / (2.0 * sigma));
    }
    out.push_back(acc / static_cast<double>(per_gen.size()));
  }
  return out;
}

std::vector<double> pm_posterior(const std::vector<double>& likelihoods, bool* fell_back) {
  if (likelihoods.empty()) throw ConfigError("pm_posterior: empty likelihood vector");
  double total = 0.0;
  for (double l : likelihoods) {
    if (!(l >= 0.0)) throw NumericError("pm_posterior: likelihoods must be >= 0");
    total += l;
  }
  if (fell_back) *fell_back = false;
  std::vector<double> out(likelihoods.size());
  if (total <= 0.0) {
    if (fell_back) *fell_back = true;
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(out.size()));
    return out;
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = likelihoods[i] / total;
  return out;
}

double pm_loss(const std::vector<double>& posterior, const std::vector<double>& pi) {
  if (posterior.size() != pi.size()) {
    throw DimensionError("pm_loss: posterior and pi lengths differ");
  }
  double h = 0.0;
  for (std::size_t g = 0; g < pi.size(); ++g) {
    if (posterior[g] == 0.0) continue;  // 0 * ln(0) := 0
    h -= posterior[g] * std::log(std::max(pi[g], kProbFloor));
  }
  return h;
}

BomResult best_of_many_loss(const std::array<Vec2, kPred>& truth,
                            const std::vector<ScoredSample>& predictions) {
  if (predictions.empty()) throw ConfigError("best_of_many_loss: needs >= 1 prediction");
  BomResult best;
  best.loss = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    double acc = 0.0;
    for (std::size_t t = 0; t < kPred; ++t) {
      acc += std::hypot(predictions[i].positions[t].x - truth[t].x,
                        predictions[i].positions[t].y - truth[t].y);
    }
    const double mean_dist = acc / static_cast<double>(kPred);
    if (mean_dist < best.loss) {
      best.loss = mean_dist;
      best.generator_id = predictions[i].generator_id;
      best.sample_index = i;
    }
  }
  return best;
}

double discriminator_loss(const std::vector<double>& real_probs,
                          const std::vector<double>& fake_probs) {
  if (real_probs.empty() || fake_probs.empty()) {
    throw ConfigError("discriminator_loss: empty probability list");
  }
  double real_term = 0.0;
  for (double p : real_probs) real_term += clamped_log(p);
  double fake_term = 0.0;
  for (double p : fake_probs) fake_term += clamped_log(1.0 - p);
  return -real_term / static_cast<double>(real_probs.size()) -
         fake_term / static_cast<double>(fake_probs.size());
}

double mean_cross_entropy(const std::vector<std::vector<double>>& class_probs,
                          const std::vector<int>& labels) {
  if (class_probs.size() != labels.size() || class_probs.empty()) {
    throw DimensionError("mean_cross_entropy: probs/labels size mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& row = class_probs[i];
    const int lbl = labels[i];
    if (lbl < 0 || static_cast<std::size_t>(lbl) >= row.size()) {
      throw ConfigError("mean_cross_entropy: label out of range");
    }
    acc -= clamped_log(row[static_cast<std::size_t>(lbl)]);
  }
  return acc / static_cast<double>(labels.size());
}

double generator_step_loss(const std::vector<double>& fake_probs,
                           const std::vector<std::vector<double>>& class_probs,
                           const std::vector<int>& generator_ids, double bom_loss,
                           double lambda_cl, double lambda_traj) {
  if (fake_probs.empty()) throw ConfigError("generator_step_loss: no fake samples");
  double adv = 0.0;
  for (double p : fake_probs) adv -= clamped_log(p);
  adv /= static_cast<double>(fake_probs.size());
  double cl = 0.0;
  if (lambda_cl > 0.0 && !class_probs.empty()) {
    cl = mean_cross_entropy(class_probs, generator_ids);
  }
  return adv + lambda_cl * cl + lambda_traj * bom_loss;
}

double classifier_step_loss(const std::vector<std::vector<double>>& class_probs,
                            const std::vector<int>& generator_ids) {
  return mean_cross_entropy(class_probs, generator_ids);
}

double infogan_code_loss(const std::vector<double>& code_probs, int true_code) {
  return mean_cross_entropy({code_probs}, {true_code});
}

}  // namespace mgtraj::train
