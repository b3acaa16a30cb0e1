#include "mgtraj/gradsuite.hpp"

#include <cmath>
#include <functional>

#include "mgtraj/grad_check.hpp"
#include "mgtraj/model.hpp"
#include "mgtraj/rng.hpp"
#include "mgtraj/tape.hpp"

namespace mgtraj::nn {

namespace {

constexpr double kPrimTol = 1e-6;
constexpr double kCompositeTol = 1e-4;

Param& rand_param(ParamSet& ps, const std::string& name, std::vector<std::size_t> shape,
                  Rng& rng, double sd = 1.0) {
  Param& p = ps.add(name, std::move(shape));
  fill_normal(p, rng, sd);
  return p;
}

// Mean of squared entries: gives every output coordinate a distinct gradient.
Var sq_mean(Tape& tp, Var y) { return tp.mean_all(tp.mul(y, y)); }

GradCaseResult run_case(const std::string& name, double tol, const std::vector<Param*>& params,
                        const std::function<double()>& loss, std::size_t cap = 0,
                        double fd_step = 1e-5) {
  const GradCheckReport rep = grad_check(loss, params, fd_step, cap, 7);
  return {name, rep.max_rel_err, tol, rep.max_rel_err < tol};
}

double run_loss(ParamSet& ps, const std::function<Var(Tape&)>& build) {
  for (Param* p : ps.all()) p->zero_grad();
  Tape tp;
  Var loss = build(tp);
  tp.backward(loss);
  return tp.scalar(loss);
}

net::BatchInputs synthetic_batch(Rng& rng) {
  net::BatchInputs in;
  in.b = 2;
  in.obs_disp = Tensor({2, 14});
  for (double& v : in.obs_disp.data) v = rng.normal(0.15, 0.1);
  in.last_pos = Tensor::matrix(2, 2, {3.0, 4.0, 6.5, 5.0});
  in.last_disp = Tensor({2, 2});
  for (std::size_t r = 0; r < 2; ++r) {
    in.last_disp.data[2 * r] = in.obs_disp.data[14 * r + 12];
    in.last_disp.data[2 * r + 1] = in.obs_disp.data[14 * r + 13];
  }
  in.patches = Tensor({2, 32, 32, 1});
  for (double& v : in.patches.data) v = rng.uniform() < 0.75 ? 1.0 : 0.0;
  in.fut_disp = Tensor({2, 24});
  for (double& v : in.fut_disp.data) v = rng.normal(0.15, 0.1);
  in.fut_pos = Tensor({2, 24});
  for (std::size_t r = 0; r < 2; ++r) {
    double x = in.last_pos.data[2 * r], y = in.last_pos.data[2 * r + 1];
    for (std::size_t t = 0; t < 12; ++t) {
      x += in.fut_disp.data[24 * r + 2 * t];
      y += in.fut_disp.data[24 * r + 2 * t + 1];
      in.fut_pos.data[24 * r + 2 * t] = x;
      in.fut_pos.data[24 * r + 2 * t + 1] = y;
    }
  }
  in.nn_rows = 2;
  in.nb_obs_disp = Tensor({2, 14});
  for (double& v : in.nb_obs_disp.data) v = rng.normal(-0.1, 0.1);
  in.nb_geom = Tensor::matrix(2, 3, {1.5, 0.8, 0.6, 2.5, -0.3, 0.95});
  in.nb_seg = {0, 1};
  return in;
}

}  // namespace

std::vector<GradCaseResult> run_gradient_suite(std::uint64_t seed) {
  std::vector<GradCaseResult> results;
  Rng rng(seed);

  {
    ParamSet ps;
    Param& a = rand_param(ps, "a", {4, 5}, rng);
    Param& b = rand_param(ps, "b", {5, 3}, rng);
    Param& c = rand_param(ps, "c", {3}, rng);
    results.push_back(run_case("matmul_add_rowvec", kPrimTol, ps.all(), [&] {
      return run_loss(ps, [&](Tape& tp) {
        return sq_mean(tp, tp.add_rowvec(tp.matmul(tp.param(a), tp.param(b)), tp.param(c)));
      });
    }));
  }
  {
    ParamSet ps;
    Param& a = rand_param(ps, "a", {3, 4}, rng);
    Param& b = rand_param(ps, "b", {3, 4}, rng);
    results.push_back(run_case("add_sub_mul_scale", kPrimTol, ps.all(), [&] {
      return run_loss(ps, [&](Tape& tp) {
        Var mixed = tp.sub(tp.add(tp.mul(tp.param(a), tp.param(b)), tp.scale(tp.param(a), 0.5)),
                           tp.add_scalar(tp.param(b), 0.1));
        return sq_mean(tp, mixed);
      });
    }));
  }
  {
    ParamSet ps;
    Param& a = rand_param(ps, "a", {3, 5}, rng);
    results.push_back(run_case("sigmoid_tanh", kPrimTol, ps.all(), [&] {
      return run_loss(ps, [&](Tape& tp) {
        return sq_mean(tp, tp.mul(tp.sigmoid(tp.param(a)), tp.tanh_(tp.param(a))));
      });
    }));
  }
  {
    // Values pushed away from the kinks so finite differences stay one-sided.
    ParamSet ps;
    Param& a = ps.add("a", {3, 5});
    for (double& v : a.value.data) {
      const double n = rng.normal();
      v = n + (n >= 0.0 ? 0.5 : -0.5);
    }
    results.push_back(run_case("relu_leaky_relu", kPrimTol, ps.all(), [&] {
      return run_loss(ps, [&](Tape& tp) {
        return sq_mean(tp, tp.add(tp.relu(tp.param(a)), tp.leaky_relu(tp.param(a), 0.2)));
      });
    }));
  }
  {
    ParamSet ps;
    Param& a = rand_param(ps, "a", {2, 6}, rng);
    results.push_back(run_case("log_clamped_of_sigmoid", kPrimTol, ps.all(), [&] {
      return run_loss(ps, [&](Tape& tp) {
        return sq_mean(tp, tp.log_clamped(tp.sigmoid(tp.param(a))));
      });
    }));
  }
  {
    ParamSet ps;
    Param& a = rand_param(ps, "a", {3, 4}, rng);
    Tensor mix({3, 4});
    for (double& v : mix.data) v = rng.normal();
    results.push_back(run_case("softmax_rows", kPrimTol, ps.all(), [&] {
      return run_loss(ps, [&](Tape& tp) {
        return tp.mean_all(tp.mul(tp.softmax_rows(tp.param(a)), tp.constant(mix)));
      });
    }));
  }
  {
    ParamSet ps;
    Param& a = rand_param(ps, "a", {4, 5}, rng);
    results.push_back(run_case("slice_concat_cols", kPrimTol, ps.all(), [&] {
      return run_loss(ps, [&](Tape& tp) {
        Var x = tp.param(a);
        Var y = tp.concat_cols({tp.slice_cols(x, 0, 2), tp.slice_cols(x, 2, 5)});
        return sq_mean(tp, y);
      });
    }));
  }
  {
    ParamSet ps;
    Param& a = rand_param(ps, "a", {3, 4}, rng);
    Param& b = rand_param(ps, "b", {2, 4}, rng);
    results.push_back(run_case("concat_gather_rows", kPrimTol, ps.all(), [&] {
      return run_loss(ps, [&](Tape& tp) {
        Var stacked = tp.concat_rows({tp.param(a), tp.param(b)});
        // duplicate index: gradient must accumulate
        Var picked = tp.gather_rows(stacked, {0, 4, 1, 1});
        return sq_mean(tp, picked);
      });
    }));
  }
  {
    ParamSet ps;
    Param& a = rand_param(ps, "a", {4, 3}, rng);
    results.push_back(run_case("gather_cols_per_row", kPrimTol, ps.all(), [&] {
      return run_loss(ps, [&](Tape& tp) {
        return sq_mean(tp, tp.gather_cols_per_row(tp.param(a), {2, 0, 1, 0}));
      });
    }));
  }
  {
    ParamSet ps;
    Param& a = rand_param(ps, "a", {4, 6}, rng);
    Param& b = rand_param(ps, "b", {4, 6}, rng);
    results.push_back(run_case("rowwise_dot", kPrimTol, ps.all(), [&] {
      return run_loss(ps, [&](Tape& tp) {
        return sq_mean(tp, tp.rowwise_dot(tp.param(a), tp.param(b)));
      });
    }));
  }
  {
    ParamSet ps;
    Param& scores = rand_param(ps, "scores", {2, 4}, rng);
    Param& feats = rand_param(ps, "feats", {8, 3}, rng);
    results.push_back(run_case("attend", kPrimTol, ps.all(), [&] {
      return run_loss(ps, [&](Tape& tp) {
        Var w = tp.softmax_rows(tp.param(scores));
        return sq_mean(tp, tp.attend(w, tp.param(feats), 4));
      });
    }));
  }
  {
    ParamSet ps;
    Param& scores = rand_param(ps, "scores", {5, 1}, rng);
    Param& feats = rand_param(ps, "feats", {5, 4}, rng);
    const std::vector<std::size_t> seg = {0, 0, 2, 2, 2};  // segment 1 stays empty
    results.push_back(run_case("segment_softmax_weighted_sum", kPrimTol, ps.all(), [&] {
      return run_loss(ps, [&](Tape& tp) {
        Var w = tp.segment_softmax(tp.param(scores), seg, 3);
        return sq_mean(tp, tp.segment_weighted_sum(w, tp.param(feats), seg, 3));
      });
    }));
  }
  {
    ParamSet ps;
    Param& x = rand_param(ps, "x", {2, 8, 8, 2}, rng);
    Param& w = rand_param(ps, "w", {3, 3, 2, 4}, rng, 0.5);
    Param& b = rand_param(ps, "b", {4}, rng, 0.5);
    results.push_back(run_case("conv3x3_maxpool_reshape", kPrimTol, ps.all(), [&] {
      return run_loss(ps, [&](Tape& tp) {
        Var y = tp.conv3x3_same(tp.param(x), tp.param(w), tp.param(b));
        y = tp.maxpool2x2(tp.tanh_(y));
        return sq_mean(tp, tp.reshape(y, {2 * 16, 4}));
      });
    }));
  }
  {
    ParamSet ps;
    Param& wx = rand_param(ps, "wx", {2, 16}, rng, 0.5);
    Param& wh = rand_param(ps, "wh", {4, 16}, rng, 0.5);
    Param& b = rand_param(ps, "b", {16}, rng, 0.5);
    Param& x1 = rand_param(ps, "x1", {3, 2}, rng);
    Param& x2 = rand_param(ps, "x2", {3, 2}, rng);
    results.push_back(run_case("lstm_cell_chain", kPrimTol, ps.all(), [&] {
      return run_loss(ps, [&](Tape& tp) {
        LstmVars cell{tp.param(wx), tp.param(wh), tp.param(b), 4};
        LstmState st{tp.zeros({3, 4}), tp.zeros({3, 4})};
        st = lstm_cell(tp, cell, tp.param(x1), st);
        st = lstm_cell(tp, cell, tp.param(x2), st);
        return sq_mean(tp, tp.concat_cols({st.h, st.c}));
      });
    }));
  }
  {
    ParamSet ps;
    Param& pred = rand_param(ps, "pred", {3, 8}, rng);
    Tensor target({3, 8});
    for (double& v : target.data) v = rng.normal(0.0, 2.0);
    results.push_back(run_case("traj_ade", kPrimTol, ps.all(), [&] {
      return run_loss(ps, [&](Tape& tp) {
        return tp.mean_all(tp.traj_ade(tp.param(pred), target));
      });
    }));
  }
  {
    ParamSet ps;
    Param& a = rand_param(ps, "a", {3, 4}, rng);
    results.push_back(run_case("mean_sum_all", kPrimTol, ps.all(), [&] {
      return run_loss(ps, [&](Tape& tp) {
        return tp.add(tp.mean_all(tp.mul(tp.param(a), tp.param(a))),
                      tp.scale(tp.sum_all(tp.sigmoid(tp.param(a))), 0.01));
      });
    }));
  }

  // Composite model losses on a 2-generator model with a tiny batch. Noise
  // and generator assignments are fixed outside the closures so every
  // finite-difference evaluation sees the same function of the parameters.
  net::ModelConfig cfg;
  cfg.kind = net::ModelKind::mg_gan;
  cfg.n_gens = 2;
  cfg.z_dim = 3;
  net::Model model = net::Model::build(cfg, seed ^ 0x5bd1e995);
  const net::BatchInputs in = synthetic_batch(rng);
  Tensor z1({2, 3});
  for (double& v : z1.data) v = rng.normal();
  Tensor fake_disp({2, 24});
  for (double& v : fake_disp.data) v = rng.normal(0.1, 0.15);

  {
    auto params = model.critic_shared_params();
    const auto head = model.d_head_params();
    params.insert(params.end(), head.begin(), head.end());
    results.push_back(run_case(
        "composite_discriminator_loss", kCompositeTol, params,
        [&] {
          for (Param* p : params) p->zero_grad();
          Tape tp;
          auto cond = net::condition_forward(tp, model.critic, in, true);
          Var real_p = net::d_head_prob(
              tp, model, cond.c, net::critic_embed_var(tp, model, tp.constant(in.fut_disp), true),
              true);
          Var fake_p = net::d_head_prob(
              tp, model, cond.c, net::critic_embed_var(tp, model, tp.constant(fake_disp), true),
              true);
          Var loss = tp.add(tp.scale(tp.mean_all(tp.log_clamped(real_p)), -1.0),
                            tp.scale(tp.mean_all(tp.log_clamped(
                                         tp.add_scalar(tp.scale(fake_p, -1.0), 1.0))),
                                     -1.0));
          tp.backward(loss);
          return tp.scalar(loss);
        },
        4));
  }
  {
    auto params = model.critic_shared_params();
    const auto head = model.c_head_params();
    params.insert(params.end(), head.begin(), head.end());
    results.push_back(run_case(
        "composite_classifier_loss", kCompositeTol, params,
        [&] {
          for (Param* p : params) p->zero_grad();
          Tape tp;
          auto cond = net::condition_forward(tp, model.critic, in, true);
          Var embed = net::critic_embed_var(tp, model, tp.constant(fake_disp), true);
          Var probs = tp.softmax_rows(net::c_head_logits(tp, model, cond.c, embed, true));
          Var picked = tp.gather_cols_per_row(probs, {1, 0});
          Var loss = tp.scale(tp.mean_all(tp.log_clamped(picked)), -1.0);
          tp.backward(loss);
          return tp.scalar(loss);
        },
        4));
  }
  {
    auto params = model.encoder_params();
    for (int g = 0; g < 2; ++g) {
      const auto gp = model.generator_params(g);
      params.insert(params.end(), gp.begin(), gp.end());
    }
    results.push_back(run_case(
        "composite_generator_loss", kCompositeTol, params,
        [&] {
          for (Param* p : params) p->zero_grad();
          Tape tp;
          auto cond = net::condition_forward(tp, model.enc, in, true);
          auto crit_cond = net::condition_forward(tp, model.critic, in, false);
          std::vector<Var> probs, ades;
          for (int g = 0; g < 2; ++g) {
            // record r rolls generator r
            const std::vector<std::size_t> owners = {static_cast<std::size_t>(g)};
            Var c_g = tp.gather_rows(cond.c, owners);
            Tensor z({1, 3});
            for (std::size_t i = 0; i < 3; ++i) z.data[i] = z1.data[3 * static_cast<std::size_t>(g) + i];
            Tensor fd({1, 2});
            fd.data = {in.last_disp.data[2 * static_cast<std::size_t>(g)],
                       in.last_disp.data[2 * static_cast<std::size_t>(g) + 1]};
            Tensor lp({1, 2});
            lp.data = {in.last_pos.data[2 * static_cast<std::size_t>(g)],
                       in.last_pos.data[2 * static_cast<std::size_t>(g) + 1]};
            Tensor tgt({1, 24});
            for (std::size_t i = 0; i < 24; ++i) {
              tgt.data[i] = in.fut_pos.data[24 * static_cast<std::size_t>(g) + i];
            }
            Var disp = net::decode_group(tp, model, g, true, c_g, z, fd);
            Var pos = net::displacements_to_positions(tp, disp, lp);
            ades.push_back(tp.traj_ade(pos, tgt));
            Var embed = net::critic_embed_var(tp, model, disp, false);
            Var ccond = tp.gather_rows(crit_cond.c, owners);
            probs.push_back(net::d_head_prob(tp, model, ccond, embed, false));
          }
          Var adv = tp.scale(tp.mean_all(tp.log_clamped(tp.concat_rows(probs))), -1.0);
          Var bom = tp.mean_all(tp.concat_rows(ades));
          Var loss = tp.add(adv, bom);
          tp.backward(loss);
          return tp.scalar(loss);
        },
        3));
  }
  {
    const auto params = model.pm_params();
    Tensor cval;
    {
      Tape tp;
      auto cond = net::condition_forward(tp, model.enc, in, false);
      cval = tp.val(cond.c);
    }
    const Tensor post = Tensor::matrix(2, 2, {0.85, 0.15, 0.3, 0.7});
    results.push_back(run_case(
        "composite_pm_loss", kCompositeTol, params,
        [&] {
          for (Param* p : params) p->zero_grad();
          Tape tp;
          Var pi = net::pm_forward_var(tp, model, tp.constant(cval), true);
          Var loss = tp.scale(tp.sum_all(tp.mul(tp.constant(post), tp.log_clamped(pi))), -0.5);
          tp.backward(loss);
          return tp.scalar(loss);
        },
        0));
  }
  return results;
}

bool all_passed(const std::vector<GradCaseResult>& results) {
  for (const auto& r : results) {
    if (!r.pass) return false;
  }
  return !results.empty();
}

}  // namespace mgtraj::nn
