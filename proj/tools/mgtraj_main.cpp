#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "mgtraj/baselines.hpp"
#include "mgtraj/checkpoint.hpp"
#include "mgtraj/evaluate.hpp"
#include "mgtraj/gradsuite.hpp"
#include "mgtraj/manifest.hpp"
#include "mgtraj/scene.hpp"
#include "mgtraj/svg.hpp"
#include "mgtraj/threading.hpp"
#include "mgtraj/trainer.hpp"

namespace fs = std::filesystem;
using namespace mgtraj;

namespace {

int cmd_gen_data(const std::string& scene, std::size_t n, std::uint64_t seed,
                 const std::string& out) {
  sim::Dataset ds;
  if (scene == "junction2" || scene == "junction3") {
    const auto kind =
        scene == "junction2" ? sim::JunctionKind::two_way : sim::JunctionKind::three_way;
    const sim::Scene sc = sim::build_junction_scene(kind, 4.2, seed);
    ds = sim::simulate_dataset(sc, n, 2, seed, worker_threads());
  } else if (scene == "circle") {
    ds = sim::make_circle_toy(seed, n);
  } else {
    throw ConfigError("unknown scene '" + scene + "' (junction2|junction3|circle)");
  }
  fs::create_directories(out);
  sim::save_dataset(ds, out);

  ExperimentManifest em;
  em.command = "gen-data";
  em.config_hash = hex16(fnv1a64_str("gen-data scene=" + scene + " n=" + std::to_string(n) +
                                     " seed=" + std::to_string(seed)));
  em.seed = seed;
  em.dataset_path = out;
  em.dataset_hash = dataset_content_hash(out);
  em.tool_version = kToolVersion;
  write_experiment_manifest(em, (fs::path(out) / "experiment.json").string());

  std::cout << "wrote " << ds.records.size() << " records to " << out << " ("
            << ds.log.episodes << " episodes, " << ds.log.discarded_agents
            << " agents discarded)\n";
  return 0;
}

int cmd_train(const std::string& config_path) {
  train::TrainConfig cfg = train::load_train_config(config_path);
  cfg = train::build_baseline(cfg.model, cfg);
  if (cfg.data.empty()) throw ConfigError("config field 'data' is required");
  if (cfg.out.empty()) throw ConfigError("config field 'out' is required");
  const sim::Dataset ds = sim::load_dataset(cfg.data);

  net::Model model = net::Model::build(cfg.model_config(), cfg.seed);
  train::Trainer trainer(model, ds, cfg);

  fs::create_directories(cfg.out);
  const std::string log_path = (fs::path(cfg.out) / "train_log.csv").string();
  fs::remove(log_path);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const train::EpochLog log = trainer.train_epoch();
    train::append_train_log(log_path, epoch, log);
    std::printf("epoch %d/%d d=%.4f g_adv=%.4f g_cl=%.4f g_bom=%.4f pm=%.4f\n", epoch,
                cfg.epochs, log.d_loss, log.g_adv, log.g_cl, log.g_bom, log.pm_loss);
    std::fflush(stdout);
  }
  net::save_checkpoint(model, cfg.out);

  ExperimentManifest em;
  em.command = "train";
  em.config_hash = hex16(net::config_hash(model.cfg));
  em.seed = cfg.seed;
  em.dataset_path = cfg.data;
  em.dataset_hash = dataset_content_hash(cfg.data);
  em.checkpoint_path = cfg.out;
  em.tool_version = kToolVersion;
  write_experiment_manifest(em, (fs::path(cfg.out) / "experiment.json").string());
  std::cout << "checkpoint written to " << cfg.out << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, int k,
             const std::string& strategy, double r_max, std::size_t n_eval, std::uint64_t seed,
             std::string out) {
  if (out.empty()) out = ckpt;
  const net::Model model = net::load_checkpoint(ckpt);
  const sim::Dataset ds = sim::load_dataset(data);

  net::EvalOptions opt;
  opt.k = k;
  opt.strategy = net::strategy_from_string(strategy);
  opt.r_max = r_max;
  opt.n_eval = n_eval;
  opt.seed = seed;
  const net::EvalReport report = net::evaluate(model, ds, opt);

  fs::create_directories(out);
  {
    std::ofstream mj(fs::path(out) / "metrics.json");
    if (!mj) throw IoError("cannot write metrics.json");
    mj << net::metrics_json(report) << "\n";
  }
  {
    std::ofstream pc(fs::path(out) / "predictions.csv");
    if (!pc) throw IoError("cannot write predictions.csv");
    pc << "sample_id,generator_id,pi,t,x,y\n";
    std::size_t sample_id = 0;
    char line[160];
    for (const auto& er : report.records) {
      for (const auto& traj : er.predictions.trajectories) {
        for (std::size_t t = 0; t < traj.positions.size(); ++t) {
          std::snprintf(line, sizeof(line), "%zu,%d,%.6f,%zu,%.6f,%.6f\n", sample_id,
                        traj.generator_id, traj.pi_value, t + 1, traj.positions[t].x,
                        traj.positions[t].y);
          pc << line;
        }
        ++sample_id;
      }
    }
  }

  // Fan plots for a few spread-out records plus the mean-π histogram.
  const std::size_t n_plots = std::min<std::size_t>(4, report.records.size());
  for (std::size_t p = 0; p < n_plots; ++p) {
    const auto& er = report.records[p * report.records.size() / n_plots];
    const auto& rec = ds.records[er.record_index];
    const auto split = sim::split_obs_future(rec);
    plot::write_trajectory_fan_svg(
        (fs::path(out) / ("fan_" + std::to_string(p) + ".svg")).string(), ds.grid,
        {split.obs.begin(), split.obs.end()}, {split.future.begin(), split.future.end()},
        er.predictions);
  }
  std::vector<double> mean_pi(static_cast<std::size_t>(model.cfg.n_gens), 0.0);
  for (const auto& er : report.records) {
    for (std::size_t g = 0; g < mean_pi.size(); ++g) mean_pi[g] += er.predictions.pi[g];
  }
  for (double& v : mean_pi) v /= static_cast<double>(report.records.size());
  plot::write_pi_histogram_svg((fs::path(out) / "pi_histogram.svg").string(), mean_pi);

  ExperimentManifest em;
  em.command = "eval";
  em.config_hash = hex16(net::config_hash(model.cfg));
  em.seed = seed;
  em.dataset_path = data;
  em.dataset_hash = dataset_content_hash(data);
  em.checkpoint_path = ckpt;
  em.tool_version = kToolVersion;
  write_experiment_manifest(em, (fs::path(out) / "experiment.json").string());

  std::cout << net::metrics_json(report) << "\n";
  return 0;
}

int cmd_grad_check() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = nn::run_gradient_suite();
  for (const auto& r : results) {
    std::printf("%-34s max_rel_err %.3e (tol %.0e) %s\n", r.name.c_str(), r.max_rel_err,
                r.tolerance, r.pass ? "ok" : "FAIL");
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%zu checks in %.1f s\n", results.size(), secs);
  if (!nn::all_passed(results)) {
    throw NumericError("gradient suite failed");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-generator trajectory prediction toolkit"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "simulate a dataset");
  std::string scene = "junction3";
  std::size_t n = 5000;
  std::uint64_t seed = 1;
  std::string out_dir;
  gen->add_option("--scene", scene, "junction2|junction3|circle");
  gen->add_option("--n", n, "number of trajectory records");
  gen->add_option("--seed", seed, "simulation seed");
  gen->add_option("--out", out_dir, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train a model from a JSON config");
  std::string config_path;
  tr->add_option("--config", config_path, "config JSON path")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ckpt, data, strategy = "expectation", eval_out;
  int k = 20;
  double r_max = 2.0;
  std::size_t n_eval = 0;
  std::uint64_t eval_seed = 1;
  ev->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  ev->add_option("--data", data, "dataset directory")->required();
  ev->add_option("--k", k, "samples per record");
  ev->add_option("--strategy", strategy, "random|expectation");
  ev->add_option("--r-max", r_max, "manifold radius at the final step (m)");
  ev->add_option("--n-eval", n_eval, "evaluate this many records (0 = all)");
  ev->add_option("--seed", eval_seed, "prediction noise seed");
  ev->add_option("--out", eval_out, "output directory (default: checkpoint dir)");

  auto* gc = app.add_subcommand("grad-check", "run the finite-difference gradient suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(scene, n, seed, out_dir);
    if (tr->parsed()) return cmd_train(config_path);
    if (ev->parsed()) return cmd_eval(ckpt, data, k, strategy, r_max, n_eval, eval_seed, eval_out);
    if (gc->parsed()) return cmd_grad_check();
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
