#include "mgtraj/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mgtraj::train {

using nlohmann::json;

void TrainConfig::validate() const {
  if (lambda_traj < 0.0 || lambda_cl < 0.0) {
    throw ConfigError("config field 'lambda_traj'/'lambda_cl' must be >= 0");
  }
  if (sigma <= 0.0) throw ConfigError("config field 'sigma' must be > 0");
  if (q < 1) throw ConfigError("config field 'q' must be >= 1");
  if (l < 1) throw ConfigError("config field 'l' must be >= 1");
  if (batch_size < 1) throw ConfigError("config field 'batch_size' must be >= 1");
  if (epochs < 0) throw ConfigError("config field 'epochs' must be >= 0");
  if (lr <= 0.0) throw ConfigError("config field 'lr' must be > 0");
  model_config().validate();
}

net::ModelConfig TrainConfig::model_config() const {
  net::ModelConfig mc;
  mc.kind = net::model_kind_from_string(model);
  mc.n_gens = n_gens;
  mc.z_dim = z_dim;
  mc.code_dim = mc.kind == net::ModelKind::infogan ? 3 : 0;
  return mc;
}

TrainConfig parse_train_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  static const std::set<std::string> known = {
      "model", "n_gens", "z_dim",  "lambda_traj", "lambda_cl", "sigma", "q",
      "l",     "batch_size", "epochs", "seed",    "lr",        "data",  "out"};
  for (const auto& item : j.items()) {
    if (!known.count(item.key())) {
      throw ConfigError("unknown config field '" + item.key() + "'");
    }
  }

  TrainConfig c;
  auto read = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      dst = j.at(key).template get<std::decay_t<decltype(dst)>>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("config field '") + key + "' has the wrong type");
    }
  };
  read("model", c.model);
  read("n_gens", c.n_gens);
  read("z_dim", c.z_dim);
  read("lambda_traj", c.lambda_traj);
  read("lambda_cl", c.lambda_cl);
  read("sigma", c.sigma);
  read("q", c.q);
  read("l", c.l);
  read("batch_size", c.batch_size);
  read("epochs", c.epochs);
  read("seed", c.seed);
  read("lr", c.lr);
  read("data", c.data);
  read("out", c.out);
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_train_config(buf.str());
}

namespace {

std::vector<nn::Param*> joined(std::vector<nn::Param*> a, const std::vector<nn::Param*>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

nn::Tensor gather_tensor_rows(const nn::Tensor& src, const std::vector<std::size_t>& rows) {
  const std::size_t c = src.cols();
  nn::Tensor out({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(src.data.begin() + static_cast<long>(rows[i] * c), c,
                out.data.begin() + static_cast<long>(i * c));
  }
  return out;
}

}  // namespace

Trainer::Trainer(net::Model& model, const sim::Dataset& ds, const TrainConfig& cfg)
    : m_(model),
      ds_(ds),
      cfg_(cfg),
      rng_(Rng::stream(cfg.seed, 17)),
      index_(net::build_record_index(ds)),
      opt_d_(joined(model.critic_shared_params(), model.d_head_params()),
             nn::AdamConfig{.lr = cfg.lr}),
      opt_enc_(model.encoder_params(), nn::AdamConfig{.lr = cfg.lr}) {
  cfg_.validate();
  if (ds_.records.empty()) throw ConfigError("training dataset is empty");
  const net::ModelConfig want = cfg_.model_config();
  if (want.kind != m_.cfg.kind || want.n_gens != m_.cfg.n_gens || want.z_dim != m_.cfg.z_dim ||
      want.code_dim != m_.cfg.code_dim) {
    throw ConfigError("train config does not match the model it was given");
  }
  const nn::AdamConfig ac{.lr = cfg_.lr};
  if (m_.cfg.has_classifier()) {
    opt_c_.emplace(joined(m_.critic_shared_params(), m_.c_head_params()), ac);
  }
  for (int g = 0; g < m_.cfg.n_gens; ++g) opt_g_.emplace_back(m_.generator_params(g), ac);
  if (m_.cfg.has_pm()) opt_pm_.emplace(m_.pm_params(), ac);
}

nn::Tensor Trainer::draw_noise(std::size_t rows, std::vector<int>* codes) {
  const std::size_t zd = static_cast<std::size_t>(cfg_.z_dim);
  const std::size_t cd = static_cast<std::size_t>(m_.cfg.code_dim);
  nn::Tensor z({rows, zd + cd});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < zd; ++i) z.data[r * (zd + cd) + i] = rng_.normal();
    if (cd > 0) {
      const std::size_t code = rng_.uniform_int(cd);
      z.data[r * (zd + cd) + zd + code] = 1.0;
      if (codes) codes->push_back(static_cast<int>(code));
    }
  }
  return z;
}

Trainer::FakeBatch Trainer::make_fakes(const net::BatchInputs& in) {
  nn::Tape tp;
  auto cond = net::condition_forward(tp, m_.enc, in, false);
  auto pi_var = net::pm_forward_var(tp, m_, cond.c, false);
  const nn::Tensor& pi = tp.val(pi_var);
  const std::size_t n_g = static_cast<std::size_t>(m_.cfg.n_gens);

  std::vector<int> gen_ids(in.b);
  std::vector<double> row(n_g);
  for (std::size_t i = 0; i < in.b; ++i) {
    for (std::size_t g = 0; g < n_g; ++g) row[g] = pi.data[i * n_g + g];
    gen_ids[i] = static_cast<int>(rng_.categorical(row));
  }
  std::vector<int> codes;
  nn::Tensor z = draw_noise(in.b, m_.cfg.kind == net::ModelKind::infogan ? &codes : nullptr);

  FakeBatch fb;
  fb.disp = nn::Tensor({in.b, 2 * net::kPred});
  for (std::size_t g = 0; g < n_g; ++g) {
    std::vector<std::size_t> owners;
    for (std::size_t i = 0; i < in.b; ++i) {
      if (gen_ids[i] == static_cast<int>(g)) owners.push_back(i);
    }
    if (owners.empty()) continue;
    nn::Var c_g = tp.gather_rows(cond.c, owners);
    nn::Var disp = net::decode_group(tp, m_, static_cast<int>(g), false, c_g,
                                     gather_tensor_rows(z, owners),
                                     gather_tensor_rows(in.last_disp, owners));
    const nn::Tensor& dv = tp.val(disp);
    for (std::size_t r = 0; r < owners.size(); ++r) {
      std::copy_n(dv.data.begin() + static_cast<long>(r * 2 * net::kPred), 2 * net::kPred,
                  fb.disp.data.begin() + static_cast<long>(owners[r] * 2 * net::kPred));
    }
  }
  fb.labels = m_.cfg.kind == net::ModelKind::infogan ? codes : gen_ids;
  return fb;
}

double Trainer::step_discriminator(const net::BatchInputs& in, const FakeBatch& fakes) {
  nn::Tape tp;
  auto cond = net::condition_forward(tp, m_.critic, in, true);
  nn::Var real_p =
      net::d_head_prob(tp, m_, cond.c, net::critic_embed_var(tp, m_, tp.constant(in.fut_disp), true), true);
  nn::Var fake_p =
      net::d_head_prob(tp, m_, cond.c, net::critic_embed_var(tp, m_, tp.constant(fakes.disp), true), true);
  nn::Var real_term = tp.mean_all(tp.log_clamped(real_p));
  nn::Var fake_term = tp.mean_all(tp.log_clamped(tp.add_scalar(tp.scale(fake_p, -1.0), 1.0)));
  nn::Var loss = tp.add(tp.scale(real_term, -1.0), tp.scale(fake_term, -1.0));
  opt_d_.zero_grads();
  tp.backward(loss);
  opt_d_.step();
  return tp.scalar(loss);
}

double Trainer::step_classifier(const net::BatchInputs& in, const FakeBatch& fakes) {
  if (!m_.cfg.has_classifier()) throw ConfigError("step_classifier: model has no classifier");
  nn::Tape tp;
  auto cond = net::condition_forward(tp, m_.critic, in, true);
  nn::Var embed = net::critic_embed_var(tp, m_, tp.constant(fakes.disp), true);
  nn::Var logits = net::c_head_logits(tp, m_, cond.c, embed, true);
  nn::Var probs = tp.softmax_rows(logits);
  std::vector<std::size_t> labels(fakes.labels.begin(), fakes.labels.end());
  nn::Var picked = tp.gather_cols_per_row(probs, std::move(labels));
  nn::Var loss = tp.scale(tp.mean_all(tp.log_clamped(picked)), -1.0);
  opt_c_->zero_grads();
  tp.backward(loss);
  opt_c_->step();
  return tp.scalar(loss);
}

Trainer::GenStepLog Trainer::step_generators(const net::BatchInputs& in) {
  const std::size_t n_g = static_cast<std::size_t>(m_.cfg.n_gens);
  const std::size_t q = static_cast<std::size_t>(cfg_.q);
  const std::size_t total = in.b * q;
  const bool infogan = m_.cfg.kind == net::ModelKind::infogan;

  nn::Tape tp;
  auto cond = net::condition_forward(tp, m_.enc, in, true);
  auto pi_var = net::pm_forward_var(tp, m_, cond.c, false);
  const nn::Tensor& pi = tp.val(pi_var);

  // Sample ids row-major (record i, draw j), then one noise row per sample.
  std::vector<int> ids(total);
  std::vector<double> row(n_g);
  for (std::size_t i = 0; i < in.b; ++i) {
    for (std::size_t g = 0; g < n_g; ++g) row[g] = pi.data[i * n_g + g];
    for (std::size_t j = 0; j < q; ++j) ids[i * q + j] = static_cast<int>(rng_.categorical(row));
  }
  std::vector<int> codes;
  nn::Tensor z = draw_noise(total, infogan ? &codes : nullptr);

  auto crit_cond = net::condition_forward(tp, m_.critic, in, false);

  std::vector<std::vector<std::size_t>> flats_of(n_g);
  for (std::size_t f = 0; f < total; ++f) {
    flats_of[static_cast<std::size_t>(ids[f])].push_back(f);
  }

  std::vector<nn::Var> prob_parts, logit_parts, ade_parts;
  std::vector<std::size_t> label_order;   // classifier target per concat row
  std::vector<std::size_t> owner_order;   // record index per concat row
  std::vector<bool> used(n_g, false);
  for (std::size_t g = 0; g < n_g; ++g) {
    const auto& flats = flats_of[g];
    if (flats.empty()) continue;
    used[g] = true;
    std::vector<std::size_t> owners(flats.size());
    for (std::size_t r = 0; r < flats.size(); ++r) owners[r] = flats[r] / q;

    nn::Var c_g = tp.gather_rows(cond.c, owners);
    nn::Var disp = net::decode_group(tp, m_, static_cast<int>(g), true, c_g,
                                     gather_tensor_rows(z, flats),
                                     gather_tensor_rows(in.last_disp, owners));
    nn::Var pos = net::displacements_to_positions(tp, disp, gather_tensor_rows(in.last_pos, owners));
    ade_parts.push_back(tp.traj_ade(pos, gather_tensor_rows(in.fut_pos, owners)));

    nn::Var embed = net::critic_embed_var(tp, m_, disp, false);
    nn::Var ccond_g = tp.gather_rows(crit_cond.c, owners);
    prob_parts.push_back(net::d_head_prob(tp, m_, ccond_g, embed, false));
    if (m_.cfg.has_classifier()) {
      logit_parts.push_back(net::c_head_logits(tp, m_, ccond_g, embed, false));
      for (std::size_t f : flats) {
        label_order.push_back(infogan ? static_cast<std::size_t>(codes[f])
                                      : g);
      }
    }
    owner_order.insert(owner_order.end(), owners.begin(), owners.end());
  }

  GenStepLog log;
  nn::Var all_p = tp.concat_rows(prob_parts);
  nn::Var g_adv = tp.scale(tp.mean_all(tp.log_clamped(all_p)), -1.0);
  log.adv = tp.scalar(g_adv);
  nn::Var loss = g_adv;

  if (m_.cfg.has_classifier()) {
    nn::Var probs = tp.softmax_rows(tp.concat_rows(logit_parts));
    nn::Var picked = tp.gather_cols_per_row(probs, std::move(label_order));
    nn::Var ce = tp.scale(tp.mean_all(tp.log_clamped(picked)), -1.0);
    log.cl = tp.scalar(ce);
    if (cfg_.lambda_cl > 0.0) loss = tp.add(loss, tp.scale(ce, cfg_.lambda_cl));
  }

  {
    nn::Var all_ade = tp.concat_rows(ade_parts);
    const nn::Tensor& av = tp.val(all_ade);
    std::vector<std::size_t> sel(in.b, 0);
    std::vector<double> best(in.b, std::numeric_limits<double>::infinity());
    for (std::size_t r = 0; r < owner_order.size(); ++r) {
      const std::size_t i = owner_order[r];
      if (av.data[r] < best[i]) {
        best[i] = av.data[r];
        sel[i] = r;
      }
    }
    nn::Var bom = tp.mean_all(tp.gather_rows(all_ade, std::move(sel)));
    log.bom = tp.scalar(bom);
    if (cfg_.lambda_traj > 0.0) loss = tp.add(loss, tp.scale(bom, cfg_.lambda_traj));
  }

  opt_enc_.zero_grads();
  for (auto& og : opt_g_) og.zero_grads();
  tp.backward(loss);
  opt_enc_.step();
  for (std::size_t g = 0; g < n_g; ++g) {
    if (used[g]) opt_g_[g].step();  // untouched decoders keep their momentum frozen
  }
  return log;
}

double Trainer::step_pm(const net::BatchInputs& in) {
  if (!m_.cfg.has_pm()) throw ConfigError("step_pm: model has no PM network");
  const std::size_t n_g = static_cast<std::size_t>(m_.cfg.n_gens);
  const std::size_t l = static_cast<std::size_t>(cfg_.l);

  nn::Tape tp;
  auto cond = net::condition_forward(tp, m_.enc, in, false);
  const nn::Tensor cval = tp.val(cond.c);

  // Noise rows laid out (record, generator, repeat).
  nn::Tensor z = draw_noise(in.b * n_g * l, nullptr);
  // Squared L2 distance to the true future per (record, generator, repeat).
  std::vector<double> sq_dist(in.b * n_g * l, 0.0);
  for (std::size_t g = 0; g < n_g; ++g) {
    std::vector<std::size_t> flats, owners;
    for (std::size_t i = 0; i < in.b; ++i) {
      for (std::size_t rep = 0; rep < l; ++rep) {
        flats.push_back((i * n_g + g) * l + rep);
        owners.push_back(i);
      }
    }
    nn::Var c_g = tp.gather_rows(cond.c, owners);
    nn::Var disp = net::decode_group(tp, m_, static_cast<int>(g), false, c_g,
                                     gather_tensor_rows(z, flats),
                                     gather_tensor_rows(in.last_disp, owners));
    nn::Var pos = net::displacements_to_positions(tp, disp, gather_tensor_rows(in.last_pos, owners));
    const nn::Tensor& pv = tp.val(pos);
    for (std::size_t r = 0; r < flats.size(); ++r) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 2 * net::kPred; ++k) {
        acc += sq(pv.data[r * 2 * net::kPred + k] -
                  in.fut_pos.data[owners[r] * 2 * net::kPred + k]);
      }
      sq_dist[flats[r]] = acc;
    }
  }

  // Posterior over generators, computed in log space so distant rollouts
  // cannot underflow the normalization.
  nn::Tensor post({in.b, n_g});
  const double ln_l = std::log(static_cast<double>(l));
  for (std::size_t i = 0; i < in.b; ++i) {
    std::vector<double> ll(n_g);
    for (std::size_t g = 0; g < n_g; ++g) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t rep = 0; rep < l; ++rep) {
        mx = std::max(mx, -sq_dist[(i * n_g + g) * l + rep] / (2.0 * cfg_.sigma));
      }
      double acc = 0.0;
      for (std::size_t rep = 0; rep < l; ++rep) {
        acc += std::exp(-sq_dist[(i * n_g + g) * l + rep] / (2.0 * cfg_.sigma) - mx);
      }
      ll[g] = mx + std::log(acc) - ln_l;
    }
    const double mx = *std::max_element(ll.begin(), ll.end());
    if (mx < -708.0) ++posterior_fallbacks_;  // literal likelihoods would all underflow
    double denom = 0.0;
    for (std::size_t g = 0; g < n_g; ++g) denom += std::exp(ll[g] - mx);
    for (std::size_t g = 0; g < n_g; ++g) post.data[i * n_g + g] = std::exp(ll[g] - mx) / denom;
  }

  nn::Tape tp2;
  nn::Var pi = net::pm_forward_var(tp2, m_, tp2.constant(cval), true);
  nn::Var ce = tp2.mul(tp2.constant(post), tp2.log_clamped(pi));
  nn::Var loss = tp2.scale(tp2.sum_all(ce), -1.0 / static_cast<double>(in.b));
  opt_pm_->zero_grads();
  tp2.backward(loss);
  opt_pm_->step();
  return tp2.scalar(loss);
}

Trainer::BatchStats Trainer::train_batch(const std::vector<std::size_t>& idx) {
  const net::BatchInputs in = net::make_batch(ds_, idx, index_);
  BatchStats s;
  auto run = [](const char* step, auto&& fn) {
    try {
      return fn();
    } catch (const NumericError& e) {
      throw NumericError(std::string(step) + ": " + e.what());
    }
  };
  const FakeBatch fakes = run("discriminator step", [&] { return make_fakes(in); });
  s.d_loss = run("discriminator step", [&] { return step_discriminator(in, fakes); });
  if (m_.cfg.has_classifier()) {
    s.c_loss = run("classifier step", [&] { return step_classifier(in, fakes); });
  }
  const GenStepLog g = run("generator step", [&] { return step_generators(in); });
  s.g_adv = g.adv;
  s.g_cl = g.cl;
  s.g_bom = g.bom;
  if (m_.cfg.has_pm()) {
    s.pm_loss = run("pm step", [&] { return step_pm(in); });
  }
  return s;
}

EpochLog Trainer::train_epoch() {
  std::vector<std::size_t> order(ds_.records.size());
  std::iota(order.begin(), order.end(), 0);
  rng_.shuffle(order);

  EpochLog acc;
  std::size_t n_batches = 0;
  const std::size_t bs = static_cast<std::size_t>(cfg_.batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    const std::vector<std::size_t> idx(order.begin() + static_cast<long>(start),
                                       order.begin() + static_cast<long>(end));
    const BatchStats s = train_batch(idx);
    acc.d_loss += s.d_loss;
    acc.g_adv += s.g_adv;
    acc.g_cl += s.g_cl;
    acc.g_bom += s.g_bom;
    acc.pm_loss += s.pm_loss;
    ++n_batches;
  }
  const double n = static_cast<double>(n_batches);
  acc.d_loss /= n;
  acc.g_adv /= n;
  acc.g_cl /= n;
  acc.g_bom /= n;
  acc.pm_loss /= n;
  ++epochs_run_;
  return acc;
}

void append_train_log(const std::string& path, int epoch, const EpochLog& log) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot write training log " + path);
  if (fresh) out << "epoch,d_loss,g_adv,g_cl,g_bom,pm_loss\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", epoch, log.d_loss,
                log.g_adv, log.g_cl, log.g_bom, log.pm_loss);
  out << line;
}

}  // namespace mgtraj::train
