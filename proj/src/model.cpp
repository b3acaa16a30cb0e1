#include "mgtraj/model.hpp"

#include <cmath>
#include <sstream>

#include "mgtraj/grid.hpp"
#include "mgtraj/rng.hpp"

namespace mgtraj::net {

namespace {
constexpr double kPi = 3.141592653589793238462643383279502884;

double wrap_pi(double a) {
  while (a > kPi) a -= 2.0 * kPi;
  while (a <= -kPi) a += 2.0 * kPi;
  return a;
}
}  // namespace

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "gan") return ModelKind::gan;
  if (s == "gan_l2") return ModelKind::gan_l2;
  if (s == "infogan") return ModelKind::infogan;
  if (s == "mgan") return ModelKind::mgan;
  if (s == "mg_gan") return ModelKind::mg_gan;
  throw ConfigError("unknown model kind '" + s + "'");
}

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::gan: return "gan";
    case ModelKind::gan_l2: return "gan_l2";
    case ModelKind::infogan: return "infogan";
    case ModelKind::mgan: return "mgan";
    case ModelKind::mg_gan: return "mg_gan";
  }
  throw ConfigError("invalid model kind");
}

void ModelConfig::validate() const {
  const bool single = kind == ModelKind::gan || kind == ModelKind::gan_l2 ||
                      kind == ModelKind::infogan;
  if (single && n_gens != 1) {
    throw ConfigError("model '" + to_string(kind) + "' requires n_G = 1");
  }
  if (!single && (n_gens < 2 || n_gens > 8)) {
    throw ConfigError("model '" + to_string(kind) + "' requires 2 <= n_G <= 8");
  }
  if (z_dim < 1) throw ConfigError("z_dim must be >= 1");
  if (kind == ModelKind::infogan && code_dim < 2) {
    throw ConfigError("infogan requires a categorical code of size >= 2");
  }
  if (kind != ModelKind::infogan && code_dim != 0) {
    throw ConfigError("code_dim is only valid for infogan");
  }
}

std::string ModelConfig::canonical_json() const {
  std::ostringstream out;
  out << "{\"kind\":\"" << to_string(kind) << "\",\"n_G\":" << n_gens << ",\"z_dim\":" << z_dim
      << ",\"code_dim\":" << code_dim << "}";
  return out.str();
}

std::uint64_t config_hash(const ModelConfig& cfg) {
  const std::string s = cfg.canonical_json();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<nn::Param*> EncoderParamRefs::all() const {
  return {dyn.wx, dyn.wh,  dyn.b,   dyn_proj_w, dyn_proj_b, cnn_w1,    cnn_b1,
          cnn_w2, cnn_b2,  phys_w1, phys_b1,    phys_w2,    phys_b2,   phys_out_w,
          phys_out_b, soc_w1, soc_b1, soc_w2,   soc_b2,     soc_proj_w, soc_proj_b};
}

std::vector<nn::Param*> GeneratorParamRefs::all() const {
  return {h0_w, h0_b, lstm.wx, lstm.wh, lstm.b, out_w, out_b};
}

namespace {

// Creation order is fixed: it defines the checkpoint tensor layout.
EncoderParamRefs add_encoder(nn::ParamSet& ps, const std::string& prefix) {
  EncoderParamRefs e;
  e.dyn.wx = &ps.add(prefix + ".dyn.wx", {2, 4 * kEncHidden});
  e.dyn.wh = &ps.add(prefix + ".dyn.wh", {kEncHidden, 4 * kEncHidden});
  e.dyn.b = &ps.add(prefix + ".dyn.b", {4 * kEncHidden});
  e.dyn_proj_w = &ps.add(prefix + ".dyn.proj.w", {kEncHidden, kFeat});
  e.dyn_proj_b = &ps.add(prefix + ".dyn.proj.b", {kFeat});
  e.cnn_w1 = &ps.add(prefix + ".cnn.w1", {3, 3, 1, kCnnChannels});
  e.cnn_b1 = &ps.add(prefix + ".cnn.b1", {kCnnChannels});
  e.cnn_w2 = &ps.add(prefix + ".cnn.w2", {3, 3, kCnnChannels, kCnnChannels});
  e.cnn_b2 = &ps.add(prefix + ".cnn.b2", {kCnnChannels});
  e.phys_w1 = &ps.add(prefix + ".phys.w1", {kCnnChannels + 2 + kFeat, kFeat});
  e.phys_b1 = &ps.add(prefix + ".phys.b1", {kFeat});
  e.phys_w2 = &ps.add(prefix + ".phys.w2", {kFeat, 1});
  e.phys_b2 = &ps.add(prefix + ".phys.b2", {1});
  e.phys_out_w = &ps.add(prefix + ".phys.out.w", {kCnnChannels, kFeat});
  e.phys_out_b = &ps.add(prefix + ".phys.out.b", {kFeat});
  e.soc_w1 = &ps.add(prefix + ".soc.w1", {4, 16});
  e.soc_b1 = &ps.add(prefix + ".soc.b1", {16});
  e.soc_w2 = &ps.add(prefix + ".soc.w2", {16, 1});
  e.soc_b2 = &ps.add(prefix + ".soc.b2", {1});
  e.soc_proj_w = &ps.add(prefix + ".soc.proj.w", {kFeat, kFeat});
  e.soc_proj_b = &ps.add(prefix + ".soc.proj.b", {kFeat});
  return e;
}

void init_linear(nn::Param& w, Rng& rng, double scale = 1.0) {
  const double sd = scale / std::sqrt(static_cast<double>(w.value.rows()));
  nn::fill_normal(w, rng, sd);
}

void init_lstm(const LstmParamRefs& l, Rng& rng, std::size_t hidden) {
  init_linear(*l.wx, rng);
  init_linear(*l.wh, rng);
  l.b->value.fill(0.0);
  for (std::size_t i = hidden; i < 2 * hidden; ++i) l.b->value[i] = 1.0;  // forget gate
}

void init_encoder(const EncoderParamRefs& e, Rng& rng) {
  init_lstm(e.dyn, rng, kEncHidden);
  init_linear(*e.dyn_proj_w, rng);
  const double conv1_sd = std::sqrt(2.0 / 9.0);
  const double conv2_sd = std::sqrt(2.0 / (9.0 * static_cast<double>(kCnnChannels)));
  nn::fill_normal(*e.cnn_w1, rng, conv1_sd);
  nn::fill_normal(*e.cnn_w2, rng, conv2_sd);
  init_linear(*e.phys_w1, rng);
  init_linear(*e.phys_w2, rng);
  init_linear(*e.phys_out_w, rng);
  init_linear(*e.soc_w1, rng);
  init_linear(*e.soc_w2, rng);
  init_linear(*e.soc_proj_w, rng);
}

nn::Tensor coord_grid(std::size_t b) {
  nn::Tensor t({b * kCnnCells, 2});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t cell = 0; cell < kCnnCells; ++cell) {
      const double cx = (static_cast<double>(cell % 8) + 0.5) / 8.0 * 2.0 - 1.0;
      const double cy = (static_cast<double>(cell / 8) + 0.5) / 8.0 * 2.0 - 1.0;
      t.data[(i * kCnnCells + cell) * 2] = cx;
      t.data[(i * kCnnCells + cell) * 2 + 1] = cy;
    }
  }
  return t;
}

}  // namespace

Model Model::build(const ModelConfig& cfg, std::uint64_t init_seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;

  m.enc = add_encoder(m.params, "enc");
  const std::size_t h0_in = kCond + static_cast<std::size_t>(cfg.noise_dim());
  for (int g = 0; g < cfg.n_gens; ++g) {
    const std::string p = "gen" + std::to_string(g);
    GeneratorParamRefs gp;
    gp.h0_w = &m.params.add(p + ".h0.w", {h0_in, kDecHidden});
    gp.h0_b = &m.params.add(p + ".h0.b", {kDecHidden});
    gp.lstm.wx = &m.params.add(p + ".lstm.wx", {2, 4 * kDecHidden});
    gp.lstm.wh = &m.params.add(p + ".lstm.wh", {kDecHidden, 4 * kDecHidden});
    gp.lstm.b = &m.params.add(p + ".lstm.b", {4 * kDecHidden});
    gp.out_w = &m.params.add(p + ".out.w", {kDecHidden, 2});
    gp.out_b = &m.params.add(p + ".out.b", {2});
    m.gens.push_back(gp);
  }
  if (cfg.has_pm()) {
    m.pm_w1 = &m.params.add("pm.w1", {kCond, kPmHidden});
    m.pm_b1 = &m.params.add("pm.b1", {kPmHidden});
    m.pm_w2 = &m.params.add("pm.w2", {kPmHidden, kPmHidden});
    m.pm_b2 = &m.params.add("pm.b2", {kPmHidden});
    m.pm_w3 = &m.params.add("pm.w3", {kPmHidden, static_cast<std::size_t>(cfg.n_gens)});
    m.pm_b3 = &m.params.add("pm.b3", {static_cast<std::size_t>(cfg.n_gens)});
  }
  m.critic = add_encoder(m.params, "critic");
  m.traj_w1 = &m.params.add("critic.traj.w1", {2 * kPred, kDecHidden});
  m.traj_b1 = &m.params.add("critic.traj.b1", {kDecHidden});
  m.traj_w2 = &m.params.add("critic.traj.w2", {kDecHidden, kTrajEmbed});
  m.traj_b2 = &m.params.add("critic.traj.b2", {kTrajEmbed});
  m.d_w1 = &m.params.add("d_head.w1", {kCond + kTrajEmbed, kHeadHidden});
  m.d_b1 = &m.params.add("d_head.b1", {kHeadHidden});
  m.d_w2 = &m.params.add("d_head.w2", {kHeadHidden, 1});
  m.d_b2 = &m.params.add("d_head.b2", {1});
  if (cfg.has_classifier()) {
    const std::size_t cd = static_cast<std::size_t>(cfg.class_dim());
    m.c_w1 = &m.params.add("c_head.w1", {kCond + kTrajEmbed, kHeadHidden});
    m.c_b1 = &m.params.add("c_head.b1", {kHeadHidden});
    m.c_w2 = &m.params.add("c_head.w2", {kHeadHidden, cd});
    m.c_b2 = &m.params.add("c_head.b2", {cd});
  }

  Rng rng(init_seed ^ 0xA24BAED4963EE407ULL);
  init_encoder(m.enc, rng);
  for (auto& gp : m.gens) {
    init_linear(*gp.h0_w, rng);
    init_lstm(gp.lstm, rng, kDecHidden);
    nn::fill_normal(*gp.out_w, rng, 0.03);
  }
  if (cfg.has_pm()) {
    init_linear(*m.pm_w1, rng);
    init_linear(*m.pm_w2, rng);
    nn::fill_normal(*m.pm_w3, rng, 0.01);  // starts near-uniform
  }
  init_encoder(m.critic, rng);
  init_linear(*m.traj_w1, rng);
  init_linear(*m.traj_w2, rng);
  init_linear(*m.d_w1, rng);
  init_linear(*m.d_w2, rng);
  if (cfg.has_classifier()) {
    init_linear(*m.c_w1, rng);
    init_linear(*m.c_w2, rng);
  }
  return m;
}

std::vector<nn::Param*> Model::generator_params(int g) const {
  return gens.at(static_cast<std::size_t>(g)).all();
}

std::vector<nn::Param*> Model::pm_params() const {
  if (!cfg.has_pm()) return {};
  return {pm_w1, pm_b1, pm_w2, pm_b2, pm_w3, pm_b3};
}

std::vector<nn::Param*> Model::critic_shared_params() const {
  auto v = critic.all();
  v.insert(v.end(), {traj_w1, traj_b1, traj_w2, traj_b2});
  return v;
}

std::vector<nn::Param*> Model::d_head_params() const { return {d_w1, d_b1, d_w2, d_b2}; }

std::vector<nn::Param*> Model::c_head_params() const {
  if (!cfg.has_classifier()) return {};
  return {c_w1, c_b1, c_w2, c_b2};
}

RecordIndex build_record_index(const sim::Dataset& ds) {
  RecordIndex by_key;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    by_key[{r.scene_id, r.ped_id, r.t0}] = i;
  }
  return by_key;
}

BatchInputs make_batch(const sim::Dataset& ds, const std::vector<std::size_t>& idx) {
  return make_batch(ds, idx, build_record_index(ds));
}

BatchInputs make_batch(const sim::Dataset& ds, const std::vector<std::size_t>& idx,
                       const RecordIndex& by_key) {
  namespace sm = mgtraj::sim;
  BatchInputs in;
  const std::size_t b = idx.size();
  in.b = b;
  in.obs_disp = nn::Tensor({b, 2 * (kObs - 1)});
  in.last_pos = nn::Tensor({b, 2});
  in.last_disp = nn::Tensor({b, 2});
  in.patches = nn::Tensor({b, sm::kPatchSize, sm::kPatchSize, 1});
  in.fut_disp = nn::Tensor({b, 2 * kPred});
  in.fut_pos = nn::Tensor({b, 2 * kPred});

  std::vector<const sm::TrajectoryRecord*> nb_records;
  for (std::size_t r = 0; r < b; ++r) {
    const auto& rec = ds.records.at(idx[r]);
    for (std::size_t t = 1; t < kObs; ++t) {
      const Vec2 d = rec.positions[t] - rec.positions[t - 1];
      in.obs_disp.data[r * 2 * (kObs - 1) + 2 * (t - 1)] = d.x;
      in.obs_disp.data[r * 2 * (kObs - 1) + 2 * (t - 1) + 1] = d.y;
    }
    const Vec2 last = rec.positions[kObs - 1];
    const Vec2 ld = last - rec.positions[kObs - 2];
    in.last_pos.data[r * 2] = last.x;
    in.last_pos.data[r * 2 + 1] = last.y;
    in.last_disp.data[r * 2] = ld.x;
    in.last_disp.data[r * 2 + 1] = ld.y;
    nn::Tensor patch = sm::crop_patch(ds.grid, last);
    std::copy(patch.data.begin(), patch.data.end(),
              in.patches.data.begin() +
                  static_cast<long>(r * sm::kPatchSize * sm::kPatchSize));
    for (std::size_t t = 0; t < kPred; ++t) {
      const Vec2 p = rec.positions[kObs + t];
      const Vec2 prev = rec.positions[kObs + t - 1];
      in.fut_pos.data[r * 2 * kPred + 2 * t] = p.x;
      in.fut_pos.data[r * 2 * kPred + 2 * t + 1] = p.y;
      in.fut_disp.data[r * 2 * kPred + 2 * t] = p.x - prev.x;
      in.fut_disp.data[r * 2 * kPred + 2 * t + 1] = p.y - prev.y;
    }
    for (int nb_id : rec.neighbor_ids[0]) {
      auto it = by_key.find({rec.scene_id, nb_id, rec.t0});
      if (it == by_key.end()) continue;
      nb_records.push_back(&ds.records[it->second]);
      in.nb_seg.push_back(r);
    }
  }

  in.nn_rows = nb_records.size();
  in.nb_obs_disp = nn::Tensor({in.nn_rows, 2 * (kObs - 1)});
  in.nb_geom = nn::Tensor({in.nn_rows, 3});
  for (std::size_t j = 0; j < nb_records.size(); ++j) {
    const auto& nb = *nb_records[j];
    for (std::size_t t = 1; t < kObs; ++t) {
      const Vec2 d = nb.positions[t] - nb.positions[t - 1];
      in.nb_obs_disp.data[j * 2 * (kObs - 1) + 2 * (t - 1)] = d.x;
      in.nb_obs_disp.data[j * 2 * (kObs - 1) + 2 * (t - 1) + 1] = d.y;
    }
    const std::size_t r = in.nb_seg[j];
    const auto& rec = ds.records.at(idx[r]);
    const Vec2 self_last = rec.positions[kObs - 1];
    const Vec2 self_disp = self_last - rec.positions[kObs - 2];
    const Vec2 rel = nb.positions[kObs - 1] - self_last;
    const double heading = std::atan2(self_disp.y, self_disp.x);
    const double bearing = wrap_pi(std::atan2(rel.y, rel.x) - heading);
    in.nb_geom.data[j * 3] = rel.norm();
    in.nb_geom.data[j * 3 + 1] = std::cos(bearing);
    in.nb_geom.data[j * 3 + 2] = std::sin(bearing);
  }
  return in;
}

BatchInputs make_single(const std::array<Vec2, kObs>& obs, const nn::Tensor& patch,
                        const std::vector<NeighborObs>& neighbors) {
  BatchInputs in;
  in.b = 1;
  in.obs_disp = nn::Tensor({1, 2 * (kObs - 1)});
  for (std::size_t t = 1; t < kObs; ++t) {
    if (!std::isfinite(obs[t].x) || !std::isfinite(obs[t].y)) {
      throw NumericError("make_single: non-finite observation");
    }
    const Vec2 d = obs[t] - obs[t - 1];
    in.obs_disp.data[2 * (t - 1)] = d.x;
    in.obs_disp.data[2 * (t - 1) + 1] = d.y;
  }
  in.last_pos = nn::Tensor({1, 2});
  in.last_pos.data[0] = obs[kObs - 1].x;
  in.last_pos.data[1] = obs[kObs - 1].y;
  in.last_disp = nn::Tensor({1, 2});
  in.last_disp.data[0] = obs[kObs - 1].x - obs[kObs - 2].x;
  in.last_disp.data[1] = obs[kObs - 1].y - obs[kObs - 2].y;
  if (patch.shape != std::vector<std::size_t>{sim::kPatchSize, sim::kPatchSize, 1}) {
    throw DimensionError("make_single: patch must be 32x32x1, got " + patch.shape_str());
  }
  in.patches = nn::Tensor({1, sim::kPatchSize, sim::kPatchSize, 1});
  in.patches.data = patch.data;

  in.nn_rows = neighbors.size();
  in.nb_obs_disp = nn::Tensor({in.nn_rows, 2 * (kObs - 1)});
  in.nb_geom = nn::Tensor({in.nn_rows, 3});
  const Vec2 self_last = obs[kObs - 1];
  const Vec2 self_disp = self_last - obs[kObs - 2];
  const double heading = std::atan2(self_disp.y, self_disp.x);
  for (std::size_t j = 0; j < neighbors.size(); ++j) {
    const auto& nb = neighbors[j];
    for (std::size_t t = 1; t < kObs; ++t) {
      const Vec2 d = nb.positions[t] - nb.positions[t - 1];
      in.nb_obs_disp.data[j * 2 * (kObs - 1) + 2 * (t - 1)] = d.x;
      in.nb_obs_disp.data[j * 2 * (kObs - 1) + 2 * (t - 1) + 1] = d.y;
    }
    const Vec2 rel = nb.positions[kObs - 1] - self_last;
    const double bearing = wrap_pi(std::atan2(rel.y, rel.x) - heading);
    in.nb_geom.data[j * 3] = rel.norm();
    in.nb_geom.data[j * 3 + 1] = std::cos(bearing);
    in.nb_geom.data[j * 3 + 2] = std::sin(bearing);
    in.nb_seg.push_back(0);
  }
  return in;
}

namespace {

nn::Var phys_attention_build(nn::Tape& tp, const EncoderParamRefs& e,
                             const std::function<nn::Var(nn::Param*)>& P, nn::Var f_flat,
                             nn::Var d, std::size_t b) {
  nn::Var coords = tp.constant(coord_grid(b));
  std::vector<std::size_t> rep(b * kCnnCells);
  for (std::size_t i = 0; i < rep.size(); ++i) rep[i] = i / kCnnCells;
  nn::Var d_rep = tp.gather_rows(d, std::move(rep));
  nn::Var inp = tp.concat_cols({f_flat, coords, d_rep});
  nn::Var h = tp.relu(tp.add_rowvec(tp.matmul(inp, P(e.phys_w1)), P(e.phys_b1)));
  nn::Var sc = tp.add_rowvec(tp.matmul(h, P(e.phys_w2)), P(e.phys_b2));
  nn::Var w = tp.softmax_rows(tp.reshape(sc, {b, kCnnCells}));
  nn::Var pooled = tp.attend(w, f_flat, kCnnCells);
  return tp.add_rowvec(tp.matmul(pooled, P(e.phys_out_w)), P(e.phys_out_b));
}

}  // namespace

CondVars condition_forward(nn::Tape& tp, const EncoderParamRefs& e, const BatchInputs& in,
                           bool trainable) {
  auto P = [&tp, trainable](nn::Param* p) {
    return trainable ? tp.param(*p) : tp.frozen(*p);
  };
  const std::size_t b = in.b;
  const std::size_t nn_rows = in.nn_rows;
  if (!in.obs_disp.all_finite()) throw NumericError("condition_forward: non-finite observations");

  nn::Var all_disp = nn_rows > 0
                         ? tp.concat_rows({tp.constant(in.obs_disp), tp.constant(in.nb_obs_disp)})
                         : tp.constant(in.obs_disp);
  nn::LstmVars lstm{P(e.dyn.wx), P(e.dyn.wh), P(e.dyn.b), kEncHidden};
  nn::LstmState st{tp.zeros({b + nn_rows, kEncHidden}), tp.zeros({b + nn_rows, kEncHidden})};
  for (std::size_t t = 0; t + 1 < kObs; ++t) {
    st = lstm_cell(tp, lstm, tp.slice_cols(all_disp, 2 * t, 2 * t + 2), st);
  }
  nn::Var d_all = tp.add_rowvec(tp.matmul(st.h, P(e.dyn_proj_w)), P(e.dyn_proj_b));
  nn::Var d = d_all;
  if (nn_rows > 0) {
    std::vector<std::size_t> own(b);
    for (std::size_t i = 0; i < b; ++i) own[i] = i;
    d = tp.gather_rows(d_all, std::move(own));
  }

  nn::Var x = tp.constant(in.patches);
  x = tp.maxpool2x2(tp.relu(tp.conv3x3_same(x, P(e.cnn_w1), P(e.cnn_b1))));
  x = tp.maxpool2x2(tp.relu(tp.conv3x3_same(x, P(e.cnn_w2), P(e.cnn_b2))));
  nn::Var f_flat = tp.reshape(x, {b * kCnnCells, kCnnChannels});
  nn::Var v = phys_attention_build(tp, e, P, f_flat, d, b);

  nn::Var s;
  if (nn_rows > 0) {
    std::vector<std::size_t> nb_rows(nn_rows);
    for (std::size_t i = 0; i < nn_rows; ++i) nb_rows[i] = b + i;
    nn::Var d_nb = tp.gather_rows(d_all, std::move(nb_rows));
    nn::Var d_own = tp.gather_rows(d, in.nb_seg);
    nn::Var dots = tp.rowwise_dot(d_own, d_nb);
    nn::Var feats = tp.concat_cols({tp.constant(in.nb_geom), dots});
    nn::Var h = tp.relu(tp.add_rowvec(tp.matmul(feats, P(e.soc_w1)), P(e.soc_b1)));
    nn::Var scores = tp.add_rowvec(tp.matmul(h, P(e.soc_w2)), P(e.soc_b2));
    nn::Var w = tp.segment_softmax(scores, in.nb_seg, b);
    nn::Var proj = tp.add_rowvec(tp.matmul(d_nb, P(e.soc_proj_w)), P(e.soc_proj_b));
    s = tp.segment_weighted_sum(w, proj, in.nb_seg, b);
  } else {
    s = tp.zeros({b, kFeat});
  }
  nn::Var c = tp.concat_cols({d, v, s});
  return {d, v, s, c};
}

nn::Var decode_group(nn::Tape& tp, const Model& m, int g, bool trainable, nn::Var c_rows,
                     const nn::Tensor& z, const nn::Tensor& first_disp) {
  if (g < 0 || g >= m.cfg.n_gens) {
    throw ConfigError("decode_group: invalid generator index " + std::to_string(g));
  }
  auto P = [&tp, trainable](nn::Param* p) {
    return trainable ? tp.param(*p) : tp.frozen(*p);
  };
  const GeneratorParamRefs& gp = m.gens[static_cast<std::size_t>(g)];
  const std::size_t mrows = tp.val(c_rows).rows();
  nn::Var h0_in = tp.concat_cols({c_rows, tp.constant(z)});
  nn::Var h = tp.add_rowvec(tp.matmul(h0_in, P(gp.h0_w)), P(gp.h0_b));
  nn::LstmVars lstm{P(gp.lstm.wx), P(gp.lstm.wh), P(gp.lstm.b), kDecHidden};
  nn::LstmState st{h, tp.zeros({mrows, kDecHidden})};
  nn::Var x = tp.constant(first_disp);
  std::vector<nn::Var> steps;
  steps.reserve(kPred);
  for (std::size_t t = 0; t < kPred; ++t) {
    st = lstm_cell(tp, lstm, x, st);
    nn::Var dt = tp.add_rowvec(tp.matmul(st.h, P(gp.out_w)), P(gp.out_b));
    steps.push_back(dt);
    x = dt;  // predicted displacement feeds back
  }
  return tp.concat_cols(steps);
}

nn::Var displacements_to_positions(nn::Tape& tp, nn::Var disp, const nn::Tensor& last_pos) {
  const std::size_t mrows = tp.val(disp).rows();
  if (last_pos.rows() != mrows || last_pos.cols() != 2) {
    throw DimensionError("displacements_to_positions: last_pos must be [M x 2]");
  }
  nn::Var p = tp.constant(last_pos);
  std::vector<nn::Var> steps;
  steps.reserve(kPred);
  for (std::size_t t = 0; t < kPred; ++t) {
    p = tp.add(p, tp.slice_cols(disp, 2 * t, 2 * t + 2));
    steps.push_back(p);
  }
  return tp.concat_cols(steps);
}

nn::Var pm_forward_var(nn::Tape& tp, const Model& m, nn::Var c, bool trainable) {
  const std::size_t b = tp.val(c).rows();
  const std::size_t n = static_cast<std::size_t>(m.cfg.n_gens);
  if (!m.cfg.has_pm()) {
    return tp.constant(nn::Tensor::full({b, n}, 1.0 / static_cast<double>(n)));
  }
  auto P = [&tp, trainable](nn::Param* p) {
    return trainable ? tp.param(*p) : tp.frozen(*p);
  };
  nn::Var h1 = tp.relu(tp.add_rowvec(tp.matmul(c, P(m.pm_w1)), P(m.pm_b1)));
  nn::Var h2 = tp.relu(tp.add_rowvec(tp.matmul(h1, P(m.pm_w2)), P(m.pm_b2)));
  nn::Var logits = tp.add_rowvec(tp.matmul(h2, P(m.pm_w3)), P(m.pm_b3));
  return tp.softmax_rows(logits);
}

nn::Var critic_embed_var(nn::Tape& tp, const Model& m, nn::Var disp, bool trainable) {
  auto P = [&tp, trainable](nn::Param* p) {
    return trainable ? tp.param(*p) : tp.frozen(*p);
  };
  nn::Var h = tp.leaky_relu(tp.add_rowvec(tp.matmul(disp, P(m.traj_w1)), P(m.traj_b1)),
                            kLeakySlope);
  return tp.leaky_relu(tp.add_rowvec(tp.matmul(h, P(m.traj_w2)), P(m.traj_b2)), kLeakySlope);
}

nn::Var d_head_prob(nn::Tape& tp, const Model& m, nn::Var cond_rows, nn::Var embed,
                    bool trainable) {
  auto P = [&tp, trainable](nn::Param* p) {
    return trainable ? tp.param(*p) : tp.frozen(*p);
  };
  nn::Var x = tp.concat_cols({cond_rows, embed});
  nn::Var h = tp.leaky_relu(tp.add_rowvec(tp.matmul(x, P(m.d_w1)), P(m.d_b1)), kLeakySlope);
  return tp.sigmoid(tp.add_rowvec(tp.matmul(h, P(m.d_w2)), P(m.d_b2)));
}

nn::Var c_head_logits(nn::Tape& tp, const Model& m, nn::Var cond_rows, nn::Var embed,
                      bool trainable) {
  if (!m.cfg.has_classifier()) throw ConfigError("c_head_logits: model has no classifier head");
  auto P = [&tp, trainable](nn::Param* p) {
    return trainable ? tp.param(*p) : tp.frozen(*p);
  };
  nn::Var x = tp.concat_cols({cond_rows, embed});
  nn::Var h = tp.leaky_relu(tp.add_rowvec(tp.matmul(x, P(m.c_w1)), P(m.c_b1)), kLeakySlope);
  return tp.add_rowvec(tp.matmul(h, P(m.c_w2)), P(m.c_b2));
}

nn::Tensor encode_dynamics(const Model& m, const std::array<Vec2, kObs>& obs) {
  nn::Tape tp;
  BatchInputs in = make_single(obs, nn::Tensor::full({sim::kPatchSize, sim::kPatchSize, 1}, 1.0),
                               {});
  nn::Var all_disp = tp.constant(in.obs_disp);
  auto P = [&tp](nn::Param* p) { return tp.frozen(*p); };
  nn::LstmVars lstm{P(m.enc.dyn.wx), P(m.enc.dyn.wh), P(m.enc.dyn.b), kEncHidden};
  nn::LstmState st{tp.zeros({1, kEncHidden}), tp.zeros({1, kEncHidden})};
  for (std::size_t t = 0; t + 1 < kObs; ++t) {
    st = lstm_cell(tp, lstm, tp.slice_cols(all_disp, 2 * t, 2 * t + 2), st);
  }
  nn::Var d = tp.add_rowvec(tp.matmul(st.h, P(m.enc.dyn_proj_w)), P(m.enc.dyn_proj_b));
  return tp.val(d);
}

nn::Tensor physical_attention(const Model& m, const nn::Tensor& f_map, const nn::Tensor& d) {
  if (f_map.shape != std::vector<std::size_t>{8, 8, kCnnChannels}) {
    throw DimensionError("physical_attention: feature map must be 8x8x16, got " +
                         f_map.shape_str());
  }
  if (d.numel() != kFeat) {
    throw DimensionError("physical_attention: d must have 32 entries, got " + d.shape_str());
  }
  nn::Tape tp;
  auto P = [&tp](nn::Param* p) { return tp.frozen(*p); };
  nn::Tensor f_flat({kCnnCells, kCnnChannels});
  f_flat.data = f_map.data;
  nn::Tensor drow({1, kFeat});
  drow.data = d.data;
  nn::Var v = phys_attention_build(tp, m.enc, P, tp.constant(f_flat), tp.constant(drow), 1);
  return tp.val(v);
}

nn::Tensor social_attention(const Model& m, const nn::Tensor& d_self,
                            const std::vector<NeighborFeature>& neighbors) {
  nn::Tape tp;
  auto P = [&tp](nn::Param* p) { return tp.frozen(*p); };
  if (neighbors.empty()) return nn::Tensor({1, kFeat});
  const std::size_t nn_rows = neighbors.size();
  nn::Tensor d_nb_t({nn_rows, kFeat});
  nn::Tensor geom({nn_rows, 3});
  for (std::size_t j = 0; j < nn_rows; ++j) {
    if (neighbors[j].distance < 0.0) throw ConfigError("social_attention: negative distance");
    std::copy(neighbors[j].d_j.data.begin(), neighbors[j].d_j.data.end(),
              d_nb_t.data.begin() + static_cast<long>(j * kFeat));
    geom.data[j * 3] = neighbors[j].distance;
    geom.data[j * 3 + 1] = std::cos(neighbors[j].bearing);
    geom.data[j * 3 + 2] = std::sin(neighbors[j].bearing);
  }
  nn::Tensor dself({1, kFeat});
  dself.data = d_self.data;
  std::vector<std::size_t> seg(nn_rows, 0);
  nn::Var d_nb = tp.constant(d_nb_t);
  nn::Var d_own = tp.gather_rows(tp.constant(dself), std::vector<std::size_t>(nn_rows, 0));
  nn::Var dots = tp.rowwise_dot(d_own, d_nb);
  nn::Var feats = tp.concat_cols({tp.constant(geom), dots});
  nn::Var h = tp.relu(tp.add_rowvec(tp.matmul(feats, P(m.enc.soc_w1)), P(m.enc.soc_b1)));
  nn::Var scores = tp.add_rowvec(tp.matmul(h, P(m.enc.soc_w2)), P(m.enc.soc_b2));
  nn::Var w = tp.segment_softmax(scores, seg, 1);
  nn::Var proj = tp.add_rowvec(tp.matmul(d_nb, P(m.enc.soc_proj_w)), P(m.enc.soc_proj_b));
  nn::Var s = tp.segment_weighted_sum(w, proj, seg, 1);
  return tp.val(s);
}

std::array<Vec2, kPred> generator_decode(const Model& m, int g, const nn::Tensor& c,
                                         const nn::Tensor& z, const Vec2& last_disp,
                                         const Vec2& last_pos) {
  if (c.numel() != kCond) {
    throw DimensionError("generator_decode: condition must have 96 entries");
  }
  if (z.numel() != static_cast<std::size_t>(m.cfg.noise_dim())) {
    throw DimensionError("generator_decode: noise length mismatch");
  }
  nn::Tape tp;
  nn::Tensor crow({1, kCond});
  crow.data = c.data;
  nn::Tensor zrow({1, z.numel()});
  zrow.data = z.data;
  nn::Tensor fd({1, 2});
  fd.data = {last_disp.x, last_disp.y};
  nn::Tensor lp({1, 2});
  lp.data = {last_pos.x, last_pos.y};
  nn::Var disp = decode_group(tp, m, g, false, tp.constant(crow), zrow, fd);
  nn::Var pos = displacements_to_positions(tp, disp, lp);
  const nn::Tensor& pv = tp.val(pos);
  std::array<Vec2, kPred> out;
  for (std::size_t t = 0; t < kPred; ++t) out[t] = {pv.data[2 * t], pv.data[2 * t + 1]};
  return out;
}

std::vector<double> pm_forward(const Model& m, const nn::Tensor& c) {
  if (!c.all_finite()) throw NumericError("pm_forward: non-finite condition");
  nn::Tape tp;
  nn::Tensor crow({1, kCond});
  crow.data = c.data;
  nn::Var pi = pm_forward_var(tp, m, tp.constant(crow), false);
  return tp.val(pi).data;
}

double discriminate(const Model& m, const nn::Tensor& x_features, const nn::Tensor& disp) {
  if (disp.numel() != 2 * kPred) {
    throw DimensionError("discriminate: trajectory must have 12 displacement steps");
  }
  nn::Tape tp;
  nn::Tensor xrow({1, kCond});
  xrow.data = x_features.data;
  nn::Tensor drow({1, 2 * kPred});
  drow.data = disp.data;
  nn::Var embed = critic_embed_var(tp, m, tp.constant(drow), false);
  nn::Var p = d_head_prob(tp, m, tp.constant(xrow), embed, false);
  return tp.val(p).data[0];
}

std::vector<double> classify(const Model& m, const nn::Tensor& x_features,
                             const nn::Tensor& disp) {
  nn::Tape tp;
  nn::Tensor xrow({1, kCond});
  xrow.data = x_features.data;
  nn::Tensor drow({1, 2 * kPred});
  drow.data = disp.data;
  nn::Var embed = critic_embed_var(tp, m, tp.constant(drow), false);
  nn::Var logits = c_head_logits(tp, m, tp.constant(xrow), embed, false);
  nn::Var probs = tp.softmax_rows(logits);
  return tp.val(probs).data;
}

}  // namespace mgtraj::net
