#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <map>
#include <numeric>

#include "doctest.h"
#include "mgtraj/losses.hpp"
#include "mgtraj/tape.hpp"
#include "mgtraj/trainer.hpp"

using namespace mgtraj;
using namespace mgtraj::train;

namespace {

std::array<Vec2, kPred> const_traj(Vec2 p) {
  std::array<Vec2, kPred> t;
  t.fill(p);
  return t;
}

// Snapshot of every parameter value for isolation checks.
std::map<std::string, nn::Tensor> snapshot(const net::Model& m) {
  std::map<std::string, nn::Tensor> out;
  for (nn::Param* p : m.params.all()) out[p->name] = p->value;
  return out;
}

// Returns the name prefixes that changed between two snapshots.
std::map<std::string, bool> changed_prefixes(const std::map<std::string, nn::Tensor>& before,
                                             const net::Model& m) {
  std::map<std::string, bool> out;
  for (nn::Param* p : m.params.all()) {
    const auto& old = before.at(p->name);
    bool moved = false;
    for (std::size_t i = 0; i < old.numel(); ++i) {
      if (old[i] != p->value[i]) {
        moved = true;
        break;
      }
    }
    const auto dot = p->name.find('.');
    const std::string prefix = p->name.substr(0, dot);
    out[prefix] = out[prefix] || moved;
  }
  return out;
}

TrainConfig small_cfg(const std::string& model, int n_gens) {
  TrainConfig cfg;
  cfg.model = model;
  cfg.n_gens = n_gens;
  cfg.q = 4;
  cfg.batch_size = 12;
  cfg.epochs = 1;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("pm_likelihood worked examples") {
  const auto truth = const_traj({1.0, 1.0});
  // Generator 0 reproduces the truth; generator 1 misses by a known margin.
  auto near = truth;
  auto off = truth;
  // Squared L2 summed over all steps = 2: spread (1/sqrt(12)) per coordinate
  // over 12 steps -> 12 * (2/12) = 2.
  const double eps = 1.0 / std::sqrt(12.0);
  for (auto& p : off) p += {eps, eps};
  const auto lik = pm_likelihood(truth, {{near}, {off}}, 1.0);
  REQUIRE(lik.size() == 2);
  CHECK(lik[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(lik[1] == doctest::Approx(std::exp(-1.0)).epsilon(1e-9));

  // Strictly decreasing in squared distance.
  double prev = 2.0;
  for (double d : {0.1, 0.5, 1.0, 2.0, 5.0}) {
    auto miss = truth;
    for (auto& p : miss) p += {d, 0.0};
    const double l = pm_likelihood(truth, {{miss}}, 1.0)[0];
    CHECK(l < prev);
    prev = l;
  }

  CHECK_THROWS_AS(pm_likelihood(truth, {{near}}, 0.0), ConfigError);
  CHECK_THROWS_AS(pm_likelihood(truth, {{near}, {}}, 1.0), ConfigError);
  auto bad = truth;
  bad[0].x = std::nan("");
  CHECK_THROWS_AS(pm_likelihood(truth, {{bad}}, 1.0), NumericError);
}

TEST_CASE("pm_posterior matches the hand-normalized Bayes oracle") {
  {
    const auto p = pm_posterior({0.4, 0.4, 0.4});
    for (double v : p) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
  {
    const auto p = pm_posterior({1.0, std::exp(-1.0)});
    CHECK(p[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(std::exp(-1.0) / (1.0 + std::exp(-1.0))).epsilon(1e-12));
    CHECK(p[0] == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(p[1] == doctest::Approx(0.2689).epsilon(1e-4));
  }
  // Scale invariance.
  {
    const auto a = pm_posterior({0.2, 0.5, 0.3});
    const auto b = pm_posterior({0.2 * 7.3, 0.5 * 7.3, 0.3 * 7.3});
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  }
  // All-zero fallback.
  {
    bool fell_back = false;
    const auto p = pm_posterior({0.0, 0.0, 0.0, 0.0}, &fell_back);
    CHECK(fell_back);
    for (double v : p) CHECK(v == doctest::Approx(0.25));
  }
}

TEST_CASE("pm_posterior equals an independent oracle on 1000 random vectors") {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(7);
    std::vector<double> lik(n);
    for (double& v : lik) v = rng.uniform() < 0.1 ? 0.0 : std::exp(rng.uniform(-20.0, 3.0));
    double total = std::accumulate(lik.begin(), lik.end(), 0.0);
    if (total <= 0.0) continue;
    const auto p = pm_posterior(lik);
    double sum = 0.0;
    for (std::size_t g = 0; g < n; ++g) {
      CHECK(std::abs(p[g] - lik[g] / total) < 1e-12);
      sum += p[g];
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("pm_loss worked examples and Gibbs minimum") {
  CHECK(pm_loss({1.0, 0.0}, {1.0, 0.0}) == doctest::Approx(0.0));
  CHECK(pm_loss({0.5, 0.5}, {0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Grid search: H(p, pi) over the 2-simplex is minimized at pi = p.
  const std::vector<double> p = {0.3, 0.7};
  double best = 1e18, best_pi = -1.0;
  for (int i = 1; i < 100; ++i) {
    const double pi0 = i / 100.0;
    const double h = pm_loss(p, {pi0, 1.0 - pi0});
    if (h < best) {
      best = h;
      best_pi = pi0;
    }
  }
  CHECK(best_pi == doctest::Approx(0.3).epsilon(1e-9));
}

TEST_CASE("best_of_many_loss picks the closest sample") {
  const auto truth = const_traj({0.0, 0.0});
  {
    const BomResult r = best_of_many_loss(truth, {{3, truth}});
    CHECK(r.loss == doctest::Approx(0.0));
    CHECK(r.generator_id == 3);
  }
  // Constant per-step offsets give mean-per-step distances equal to the
  // offsets: [2.0, 0.5, 1.0] -> loss 0.5 from sample index 1 (the spec's
  // third-listed sample 2 counts from 1).
  std::vector<ScoredSample> samples;
  for (double dist : {2.0, 0.5, 1.0}) {
    ScoredSample s;
    s.generator_id = static_cast<int>(samples.size());
    s.positions = const_traj({dist, 0.0});
    samples.push_back(s);
  }
  const BomResult r = best_of_many_loss(truth, samples);
  CHECK(r.loss == doctest::Approx(0.5));
  CHECK(r.generator_id == 1);
  CHECK(r.sample_index == 1);

  // Adding a worse sample never increases the loss.
  ScoredSample worse;
  worse.generator_id = 7;
  worse.positions = const_traj({9.0, 9.0});
  samples.push_back(worse);
  CHECK(best_of_many_loss(truth, samples).loss == doctest::Approx(0.5));
}

TEST_CASE("discriminator_loss worked examples") {
  CHECK(discriminator_loss({0.5}, {0.5}) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(discriminator_loss({1.0}, {0.0}) == doctest::Approx(0.0).epsilon(1e-9));
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double r = rng.uniform(), f = rng.uniform();
    CHECK(discriminator_loss({r}, {f}) >= 0.0);
  }
}

TEST_CASE("generator_step_loss composes its three terms") {
  // D(fake)=0.5 and a uniform 2-class classifier, bom=0: ln2 + ln2.
  const double loss =
      generator_step_loss({0.5}, {{0.5, 0.5}}, {0}, 0.0, 1.0, 1.0);
  CHECK(loss == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  // Both weights zero: the pure non-saturating term.
  CHECK(generator_step_loss({0.5}, {{0.5, 0.5}}, {0}, 123.0, 0.0, 0.0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // One-hot correct classifier contributes zero cross entropy.
  CHECK(generator_step_loss({0.5}, {{1.0, 0.0}}, {0}, 0.0, 1.0, 1.0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));
  // The trajectory term enters linearly.
  CHECK(generator_step_loss({0.5}, {{1.0, 0.0}}, {0}, 2.5, 1.0, 0.5) ==
        doctest::Approx(std::log(2.0) + 1.25).epsilon(1e-9));
}

TEST_CASE("classifier_step_loss worked examples") {
  CHECK(classifier_step_loss({{0.25, 0.25, 0.25, 0.25}}, {2}) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(classifier_step_loss({{0.0, 1.0}}, {1}) == doctest::Approx(0.0).epsilon(1e-9));
  // Permutation invariance of the batch mean.
  const std::vector<std::vector<double>> probs = {{0.7, 0.3}, {0.2, 0.8}, {0.5, 0.5}};
  const double a = classifier_step_loss(probs, {0, 1, 0});
  const double b = classifier_step_loss({probs[2], probs[0], probs[1]}, {0, 0, 1});
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
  CHECK_THROWS_AS(classifier_step_loss(probs, {0, 2, 0}), ConfigError);
}

TEST_CASE("infogan_code_loss is the categorical cross entropy") {
  CHECK(infogan_code_loss({1.0 / 3, 1.0 / 3, 1.0 / 3}, 1) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(infogan_code_loss({0.0, 1.0, 0.0}, 1) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("best-of-many gradient skips non-minimizing samples") {
  // Mirror of the trainer's BoM wiring: per-sample distances, argmin
  // selection via gather_rows, gradient through the winner only.
  nn::ParamSet ps;
  nn::Param& pred = ps.add("pred", {2, 2 * kPred});  // two candidate rollouts
  nn::Tensor target({2, 2 * kPred});                 // same truth row for both
  for (std::size_t t = 0; t < kPred; ++t) {
    pred.value.at2(0, 2 * t) = 5.0;  // sample 0 stays far
    pred.value.at2(1, 2 * t) = 0.3;  // sample 1 wins
  }
  pred.zero_grad();
  nn::Tape tp;
  const nn::Var ade = tp.traj_ade(tp.param(pred), target);
  const std::size_t winner = tp.val(ade)[0] < tp.val(ade)[1] ? 0 : 1;
  REQUIRE(winner == 1);
  const nn::Var bom = tp.mean_all(tp.gather_rows(ade, {winner}));
  tp.backward(bom);
  for (std::size_t c = 0; c < 2 * kPred; ++c) {
    CHECK(pred.grad.at2(0, c) == 0.0);  // loser receives nothing
  }
  double winner_grad = 0.0;
  for (std::size_t c = 0; c < 2 * kPred; ++c) winner_grad += std::abs(pred.grad.at2(1, c));
  CHECK(winner_grad > 0.0);
}

TEST_CASE("config parsing rejects unknown keys and wrong types") {
  CHECK_THROWS_WITH_AS(parse_train_config(R"({"model":"mg_gan","bogus":1})"),
                       doctest::Contains("bogus"), ConfigError);
  CHECK_THROWS_AS(parse_train_config(R"({"q":"twenty"})"), ConfigError);
  CHECK_THROWS_AS(parse_train_config(R"({)"), ConfigError);
  const TrainConfig cfg = parse_train_config(
      R"({"model":"mgan","n_gens":4,"q":10,"lambda_traj":0.5,"seed":9})");
  CHECK(cfg.model == "mgan");
  CHECK(cfg.n_gens == 4);
  CHECK(cfg.q == 10);
  CHECK(cfg.lambda_traj == doctest::Approx(0.5));
  CHECK(cfg.seed == 9);
}

TEST_CASE("config validation names the offending field") {
  TrainConfig cfg = small_cfg("mg_gan", 3);
  cfg.q = 0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("q"), ConfigError);
  cfg = small_cfg("mg_gan", 3);
  cfg.sigma = 0.0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("sigma"), ConfigError);
  cfg = small_cfg("mg_gan", 3);
  cfg.lambda_cl = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_cfg("mg_gan", 3);
  cfg.l = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("training steps touch only their own networks") {
  const sim::Dataset ds = sim::make_circle_toy(3, 80);
  const TrainConfig cfg = small_cfg("mg_gan", 3);
  net::Model m = net::Model::build(cfg.model_config(), 11);
  Trainer trainer(m, ds, cfg);
  std::vector<std::size_t> idx(12);
  std::iota(idx.begin(), idx.end(), 0);
  const net::BatchInputs in = net::make_batch(ds, idx);

  // Discriminator phase: critic encoder + D head only.
  {
    const auto before = snapshot(m);
    const auto fakes = trainer.make_fakes(in);
    trainer.step_discriminator(in, fakes);
    const auto moved = changed_prefixes(before, m);
    CHECK(moved.at("critic"));
    CHECK(moved.at("d_head"));
    CHECK_FALSE(moved.at("c_head"));
    CHECK_FALSE(moved.at("enc"));
    CHECK_FALSE(moved.at("pm"));
    CHECK_FALSE(moved.at("gen0"));
    CHECK_FALSE(moved.at("gen1"));
    CHECK_FALSE(moved.at("gen2"));
  }
  // Classifier phase: critic encoder + C head only.
  {
    const auto before = snapshot(m);
    const auto fakes = trainer.make_fakes(in);
    trainer.step_classifier(in, fakes);
    const auto moved = changed_prefixes(before, m);
    CHECK(moved.at("critic"));
    CHECK(moved.at("c_head"));
    CHECK_FALSE(moved.at("d_head"));
    CHECK_FALSE(moved.at("enc"));
    CHECK_FALSE(moved.at("pm"));
    CHECK_FALSE(moved.at("gen0"));
  }
  // Generator phase: decoders + generator-side encoder only.
  {
    const auto before = snapshot(m);
    trainer.step_generators(in);
    const auto moved = changed_prefixes(before, m);
    CHECK(moved.at("enc"));
    CHECK((moved.at("gen0") || moved.at("gen1") || moved.at("gen2")));
    CHECK_FALSE(moved.at("critic"));
    CHECK_FALSE(moved.at("d_head"));
    CHECK_FALSE(moved.at("c_head"));
    CHECK_FALSE(moved.at("pm"));
  }
  // PM phase: PM-Net only.
  {
    const auto before = snapshot(m);
    trainer.step_pm(in);
    const auto moved = changed_prefixes(before, m);
    CHECK(moved.at("pm"));
    CHECK_FALSE(moved.at("enc"));
    CHECK_FALSE(moved.at("critic"));
    CHECK_FALSE(moved.at("d_head"));
    CHECK_FALSE(moved.at("c_head"));
    CHECK_FALSE(moved.at("gen0"));
    CHECK_FALSE(moved.at("gen1"));
    CHECK_FALSE(moved.at("gen2"));
  }
}

TEST_CASE("zero loss weights still update the adversarial and pm machinery") {
  const sim::Dataset ds = sim::make_circle_toy(7, 60);
  TrainConfig cfg = small_cfg("mg_gan", 2);
  cfg.lambda_traj = 0.0;
  cfg.lambda_cl = 0.0;
  net::Model m = net::Model::build(cfg.model_config(), 13);
  Trainer trainer(m, ds, cfg);
  std::vector<std::size_t> idx(12);
  std::iota(idx.begin(), idx.end(), 0);
  const auto before = snapshot(m);
  const auto stats = trainer.train_batch(idx);
  const auto moved = changed_prefixes(before, m);
  CHECK(moved.at("pm"));
  CHECK(moved.at("d_head"));
  CHECK((moved.at("gen0") || moved.at("gen1")));
  CHECK(stats.pm_loss > 0.0);

  // The distribution over generators stays a simplex after real updates.
  const net::BatchInputs in = net::make_batch(ds, idx);
  nn::Tape tp;
  const net::CondVars cond = net::condition_forward(tp, m.enc, in, false);
  const nn::Tensor& pi = tp.val(net::pm_forward_var(tp, m, cond.c, false));
  for (std::size_t r = 0; r < pi.rows(); ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < pi.cols(); ++c) {
      CHECK(pi.at2(r, c) >= 0.0);
      sum += pi.at2(r, c);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("pm-net trained alone concentrates on the better generator") {
  const sim::Dataset ds = sim::make_circle_toy(17, 60);
  const TrainConfig cfg = small_cfg("mg_gan", 2);
  net::Model m = net::Model::build(cfg.model_config(), 19);
  // Freeze the story: generator 0 runs away from every truth, generator 1
  // holds the last observed position (always nearer on this slow-moving toy).
  for (int g = 0; g < 2; ++g) {
    for (nn::Param* p : m.generator_params(g)) p->value.fill(0.0);
  }
  m.params.find("gen0.out.b")->value[0] = 25.0;
  m.params.find("gen0.out.b")->value[1] = 25.0;
  Trainer trainer(m, ds, cfg);
  std::vector<std::size_t> idx(12);
  std::iota(idx.begin(), idx.end(), 0);
  const net::BatchInputs in = net::make_batch(ds, idx);
  for (int step = 0; step < 500; ++step) trainer.step_pm(in);

  nn::Tape tp;
  const net::CondVars cond = net::condition_forward(tp, m.enc, in, false);
  const nn::Tensor& pi = tp.val(net::pm_forward_var(tp, m, cond.c, false));
  double mean_p1 = 0.0;
  for (std::size_t r = 0; r < pi.rows(); ++r) mean_p1 += pi.at2(r, 1);
  mean_p1 /= static_cast<double>(pi.rows());
  CHECK(mean_p1 > 0.9);
}

TEST_CASE("training is deterministic under a fixed seed") {
  const sim::Dataset ds = sim::make_circle_toy(23, 90);
  auto run = [&]() {
    const TrainConfig cfg = small_cfg("mg_gan", 3);
    net::Model m = net::Model::build(cfg.model_config(), cfg.seed);
    Trainer trainer(m, ds, cfg);
    trainer.train_epoch();
    std::vector<double> flat;
    for (nn::Param* p : m.params.all()) {
      flat.insert(flat.end(), p->value.data.begin(), p->value.data.end());
    }
    return flat;
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] == b[i]);
    if (a[i] != b[i]) break;  // avoid flooding the log
  }
}

TEST_CASE("a poisoned parameter aborts naming the failing step") {
  const sim::Dataset ds = sim::make_circle_toy(29, 60);
  const TrainConfig cfg = small_cfg("mg_gan", 2);
  net::Model m = net::Model::build(cfg.model_config(), 23);
  Trainer trainer(m, ds, cfg);
  m.params.find("d_head.w2")->value[0] = std::nan("");
  std::vector<std::size_t> idx(8);
  std::iota(idx.begin(), idx.end(), 0);
  CHECK_THROWS_WITH_AS(trainer.train_batch(idx), doctest::Contains("discriminator step"),
                       NumericError);
}

TEST_CASE("trainer rejects a model that disagrees with the config") {
  const sim::Dataset ds = sim::make_circle_toy(31, 40);
  const TrainConfig cfg = small_cfg("mg_gan", 3);
  net::Model wrong = net::Model::build(
      [] {
        net::ModelConfig c;
        c.kind = net::ModelKind::mg_gan;
        c.n_gens = 4;
        return c;
      }(),
      1);
  CHECK_THROWS_AS(Trainer(wrong, ds, cfg), ConfigError);
}
