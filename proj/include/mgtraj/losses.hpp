#pragma once

#include <array>
#include <vector>

#include "mgtraj/common.hpp"
#include "mgtraj/dataset.hpp"

namespace mgtraj::train {

inline constexpr std::size_t kPred = sim::kPredLen;

// Per-generator unnormalized likelihood of the ground truth under a kernel
// around each generator's samples: (1/l) sum_i exp(-||Yhat_i - Y||^2 / (2 sigma)).
// samples[g] holds l trajectories for generator g.
std::vector<double> pm_likelihood(const std::array<Vec2, kPred>& truth,
                                  const std::vector<std::vector<std::array<Vec2, kPred>>>& samples,
                                  double sigma);

// Normalizes likelihoods into a posterior (uniform prior cancels). All-zero
// input falls back to the uniform posterior; `fell_back` reports that.
std::vector<double> pm_posterior(const std::vector<double>& likelihoods,
                                 bool* fell_back = nullptr);

// Cross entropy H(p, pi) = -sum p_g ln pi_g with pi clamped to >= 1e-12.
double pm_loss(const std::vector<double>& posterior, const std::vector<double>& pi);

struct ScoredSample {
  int generator_id = 0;
  std::array<Vec2, kPred> positions{};
};

struct BomResult {
  double loss = 0.0;       // min over samples of mean-per-step L2 distance
  int generator_id = 0;    // generator that produced the minimizing sample
  std::size_t sample_index = 0;
};

BomResult best_of_many_loss(const std::array<Vec2, kPred>& truth,
                            const std::vector<ScoredSample>& predictions);

// -mean ln D(real) - mean ln(1 - D(fake)), probabilities clamped to
// [1e-12, 1 - 1e-12].
double discriminator_loss(const std::vector<double>& real_probs,
                          const std::vector<double>& fake_probs);

// Mean cross entropy of row-wise class distributions against integer labels.
// `class_probs[i]` is a simplex over classes.
double mean_cross_entropy(const std::vector<std::vector<double>>& class_probs,
                          const std::vector<int>& labels);

// Non-saturating adversarial term plus weighted classification and
// best-of-many terms.
double generator_step_loss(const std::vector<double>& fake_probs,
                           const std::vector<std::vector<double>>& class_probs,
                           const std::vector<int>& generator_ids, double bom_loss,
                           double lambda_cl, double lambda_traj);

double classifier_step_loss(const std::vector<std::vector<double>>& class_probs,
                            const std::vector<int>& generator_ids);

// CE between a predicted code distribution and the sampled one-hot code.
double infogan_code_loss(const std::vector<double>& code_probs, int true_code);

}  // namespace mgtraj::train
