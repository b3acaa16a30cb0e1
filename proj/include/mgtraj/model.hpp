#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "mgtraj/dataset.hpp"
#include "mgtraj/params.hpp"
#include "mgtraj/tape.hpp"

namespace mgtraj::net {

enum class ModelKind { gan, gan_l2, infogan, mgan, mg_gan };
ModelKind model_kind_from_string(const std::string& s);
std::string to_string(ModelKind k);

// Architecture widths. Feature blocks d/v/s are 32 each; decoder and PM-Net
// hidden width 48.
inline constexpr std::size_t kFeat = 32;
inline constexpr std::size_t kEncHidden = 32;
inline constexpr std::size_t kDecHidden = 48;
inline constexpr std::size_t kPmHidden = 48;
inline constexpr std::size_t kCond = 3 * kFeat;       // 96
inline constexpr std::size_t kCnnChannels = 16;
inline constexpr std::size_t kCnnCells = 8 * 8;       // after two 2x2 pools of 32x32
inline constexpr std::size_t kTrajEmbed = 32;
inline constexpr std::size_t kHeadHidden = 64;
inline constexpr std::size_t kObs = sim::kObsLen;
inline constexpr std::size_t kPred = sim::kPredLen;
inline constexpr double kLeakySlope = 0.2;

struct ModelConfig {
  ModelKind kind = ModelKind::mg_gan;
  int n_gens = 5;
  int z_dim = 8;
  int code_dim = 0;  // infogan: categorical code size appended to z

  bool has_pm() const { return kind == ModelKind::mg_gan; }
  bool has_classifier() const {
    return kind == ModelKind::mgan || kind == ModelKind::mg_gan || kind == ModelKind::infogan;
  }
  // Classifier target count: generator index, or the latent code for infogan.
  int class_dim() const { return kind == ModelKind::infogan ? code_dim : n_gens; }
  int noise_dim() const { return z_dim + code_dim; }
  void validate() const;
  std::string canonical_json() const;
};

std::uint64_t config_hash(const ModelConfig& cfg);

struct LstmParamRefs {
  nn::Param* wx = nullptr;
  nn::Param* wh = nullptr;
  nn::Param* b = nullptr;
};

// One scene/trajectory condition encoder (dynamics LSTM + occupancy CNN with
// physical attention + social attention). The generator side and the critic
// side each own an instance of this set.
struct EncoderParamRefs {
  LstmParamRefs dyn;
  nn::Param* dyn_proj_w = nullptr;
  nn::Param* dyn_proj_b = nullptr;
  nn::Param* cnn_w1 = nullptr;
  nn::Param* cnn_b1 = nullptr;
  nn::Param* cnn_w2 = nullptr;
  nn::Param* cnn_b2 = nullptr;
  nn::Param* phys_w1 = nullptr;
  nn::Param* phys_b1 = nullptr;
  nn::Param* phys_w2 = nullptr;
  nn::Param* phys_b2 = nullptr;
  nn::Param* phys_out_w = nullptr;
  nn::Param* phys_out_b = nullptr;
  nn::Param* soc_w1 = nullptr;
  nn::Param* soc_b1 = nullptr;
  nn::Param* soc_w2 = nullptr;
  nn::Param* soc_b2 = nullptr;
  nn::Param* soc_proj_w = nullptr;
  nn::Param* soc_proj_b = nullptr;
  std::vector<nn::Param*> all() const;
};

struct GeneratorParamRefs {
  nn::Param* h0_w = nullptr;
  nn::Param* h0_b = nullptr;
  LstmParamRefs lstm;
  nn::Param* out_w = nullptr;
  nn::Param* out_b = nullptr;
  std::vector<nn::Param*> all() const;
};

struct Model {
  ModelConfig cfg;
  nn::ParamSet params;

  EncoderParamRefs enc;                    // generator-side condition encoder
  std::vector<GeneratorParamRefs> gens;    // n_gens decoders, no weight sharing
  nn::Param* pm_w1 = nullptr;              // PM-Net (mg_gan only)
  nn::Param* pm_b1 = nullptr;
  nn::Param* pm_w2 = nullptr;
  nn::Param* pm_b2 = nullptr;
  nn::Param* pm_w3 = nullptr;
  nn::Param* pm_b3 = nullptr;

  EncoderParamRefs critic;                 // shared by D and C heads
  nn::Param* traj_w1 = nullptr;            // critic trajectory embedding
  nn::Param* traj_b1 = nullptr;
  nn::Param* traj_w2 = nullptr;
  nn::Param* traj_b2 = nullptr;
  nn::Param* d_w1 = nullptr;
  nn::Param* d_b1 = nullptr;
  nn::Param* d_w2 = nullptr;
  nn::Param* d_b2 = nullptr;
  nn::Param* c_w1 = nullptr;               // classifier / MI head (optional)
  nn::Param* c_b1 = nullptr;
  nn::Param* c_w2 = nullptr;
  nn::Param* c_b2 = nullptr;

  static Model build(const ModelConfig& cfg, std::uint64_t init_seed);

  std::vector<nn::Param*> encoder_params() const { return enc.all(); }
  std::vector<nn::Param*> generator_params(int g) const;
  std::vector<nn::Param*> pm_params() const;
  std::vector<nn::Param*> critic_shared_params() const;
  std::vector<nn::Param*> d_head_params() const;
  std::vector<nn::Param*> c_head_params() const;
};

// Plain-tensor inputs for a batch of records. Neighbor rows are flattened
// with a segment index back to their owning record row.
struct BatchInputs {
  std::size_t b = 0;
  nn::Tensor obs_disp;   // {B, 14}: 7 observed displacement vectors
  nn::Tensor last_pos;   // {B, 2}
  nn::Tensor last_disp;  // {B, 2}
  nn::Tensor patches;    // {B, 32, 32, 1}
  nn::Tensor fut_disp;   // {B, 24}; empty for inference-only batches
  nn::Tensor fut_pos;    // {B, 24}
  std::size_t nn_rows = 0;
  nn::Tensor nb_obs_disp;            // {NN, 14}
  nn::Tensor nb_geom;                // {NN, 3}: distance, cos bearing, sin bearing
  std::vector<std::size_t> nb_seg;   // owning record row per neighbor
};

struct NeighborObs {
  std::array<Vec2, kObs> positions;
};

// Lookup from (scene_id, ped_id, t0) to record position, used to resolve
// neighbor ids. Build once per dataset; make_batch accepts it to avoid a
// rebuild per batch.
using RecordIndex = std::map<std::tuple<int, int, int>, std::size_t>;
RecordIndex build_record_index(const sim::Dataset& ds);

BatchInputs make_batch(const sim::Dataset& ds, const std::vector<std::size_t>& idx);
BatchInputs make_batch(const sim::Dataset& ds, const std::vector<std::size_t>& idx,
                       const RecordIndex& index);
BatchInputs make_single(const std::array<Vec2, kObs>& obs, const nn::Tensor& patch,
                        const std::vector<NeighborObs>& neighbors);

struct CondVars {
  nn::Var d;
  nn::Var v;
  nn::Var s;
  nn::Var c;
};

// Builds the condition features for a batch with the given encoder parameter
// set. `trainable` decides whether parameters enter the tape as leaves that
// receive gradients.
CondVars condition_forward(nn::Tape& tp, const EncoderParamRefs& enc, const BatchInputs& in,
                           bool trainable);

// Batched decoder rollout for one generator over M samples. Returns predicted
// displacements {M, 24}; positions follow by cumulative summation from
// last_pos rows.
nn::Var decode_group(nn::Tape& tp, const Model& m, int g, bool trainable, nn::Var c_rows,
                     const nn::Tensor& z, const nn::Tensor& first_disp);
nn::Var displacements_to_positions(nn::Tape& tp, nn::Var disp, const nn::Tensor& last_pos);

// PM-Net probabilities {B, n_gens}. For kinds without PM-Net returns the
// fixed distribution (point mass for single-generator kinds, uniform for
// mgan) as a constant.
nn::Var pm_forward_var(nn::Tape& tp, const Model& m, nn::Var c, bool trainable);

nn::Var critic_embed_var(nn::Tape& tp, const Model& m, nn::Var disp, bool trainable);
nn::Var d_head_prob(nn::Tape& tp, const Model& m, nn::Var cond_rows, nn::Var embed,
                    bool trainable);
nn::Var c_head_logits(nn::Tape& tp, const Model& m, nn::Var cond_rows, nn::Var embed,
                      bool trainable);

// Single-sample convenience ops.
nn::Tensor encode_dynamics(const Model& m, const std::array<Vec2, kObs>& obs);
nn::Tensor physical_attention(const Model& m, const nn::Tensor& f_map, const nn::Tensor& d);
struct NeighborFeature {
  nn::Tensor d_j;     // {1, 32}
  double distance;    // m, >= 0
  double bearing;     // rad, (-pi, pi]
};
nn::Tensor social_attention(const Model& m, const nn::Tensor& d_self,
                            const std::vector<NeighborFeature>& neighbors);
std::array<Vec2, kPred> generator_decode(const Model& m, int g, const nn::Tensor& c,
                                         const nn::Tensor& z, const Vec2& last_disp,
                                         const Vec2& last_pos);
std::vector<double> pm_forward(const Model& m, const nn::Tensor& c);
double discriminate(const Model& m, const nn::Tensor& x_features, const nn::Tensor& disp);
std::vector<double> classify(const Model& m, const nn::Tensor& x_features,
                             const nn::Tensor& disp);

}  // namespace mgtraj::net
