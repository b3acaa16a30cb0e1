#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mgtraj/losses.hpp"
#include "mgtraj/model.hpp"
#include "mgtraj/optim.hpp"

namespace mgtraj::train {

struct TrainConfig {
  std::string model = "mg_gan";
  int n_gens = 5;
  int z_dim = 8;
  double lambda_traj = 1.0;
  double lambda_cl = 1.0;
  double sigma = 1.0;       // meters, posterior kernel width
  int q = 20;               // generator-step samples per record
  int l = 1;                // PM-step samples per generator
  int batch_size = 64;
  int epochs = 10;
  std::uint64_t seed = 1;
  double lr = 0.001;
  std::string data;         // dataset directory
  std::string out;          // output directory

  void validate() const;
  net::ModelConfig model_config() const;
};

// Parses a JSON document; unknown keys are rejected with the offending field
// named. Keys mirror the TrainConfig field names.
TrainConfig parse_train_config(const std::string& json_text);
TrainConfig load_train_config(const std::string& path);

struct EpochLog {
  double d_loss = 0.0;
  double g_adv = 0.0;
  double g_cl = 0.0;
  double g_bom = 0.0;
  double pm_loss = 0.0;
};

// Alternating-scheme trainer. Each network (D, C, every generator, the
// generator-side encoder, PM-Net) owns an independent Adam state. The step_*
// methods are exposed so gradient isolation is testable; train_epoch composes
// them per batch in the fixed order D, C, G, PM.
class Trainer {
 public:
  Trainer(net::Model& model, const sim::Dataset& ds, const TrainConfig& cfg);

  EpochLog train_epoch();
  int epochs_run() const { return epochs_run_; }

  // One full pass over a single batch, phase by phase.
  struct BatchStats {
    double d_loss = 0.0;
    double c_loss = 0.0;  // classifier's own step (not logged to CSV)
    double g_adv = 0.0;
    double g_cl = 0.0;
    double g_bom = 0.0;
    double pm_loss = 0.0;
  };
  BatchStats train_batch(const std::vector<std::size_t>& idx);

  struct FakeBatch {
    nn::Tensor disp;              // {B, 24} displacements, sample order
    std::vector<int> labels;      // generator id (or infogan code) per sample
  };
  // Samples one generator id (and code, for infogan) per record from the
  // current π and rolls the matching decoder forward without gradients.
  FakeBatch make_fakes(const net::BatchInputs& in);
  double step_discriminator(const net::BatchInputs& in, const FakeBatch& fakes);
  double step_classifier(const net::BatchInputs& in, const FakeBatch& fakes);
  struct GenStepLog {
    double adv = 0.0;
    double cl = 0.0;
    double bom = 0.0;
  };
  GenStepLog step_generators(const net::BatchInputs& in);
  double step_pm(const net::BatchInputs& in);

  std::size_t posterior_fallbacks() const { return posterior_fallbacks_; }

 private:
  nn::Tensor draw_noise(std::size_t rows, std::vector<int>* codes);

  net::Model& m_;
  const sim::Dataset& ds_;
  TrainConfig cfg_;
  Rng rng_;
  net::RecordIndex index_;
  nn::Adam opt_d_;
  std::optional<nn::Adam> opt_c_;
  std::vector<nn::Adam> opt_g_;
  nn::Adam opt_enc_;
  std::optional<nn::Adam> opt_pm_;
  int epochs_run_ = 0;
  std::size_t posterior_fallbacks_ = 0;
};

// Writes/updates `train_log.csv` with one row per epoch.
void append_train_log(const std::string& path, int epoch, const EpochLog& log);

}  // namespace mgtraj::train
