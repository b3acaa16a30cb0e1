#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "mgtraj/checkpoint.hpp"
#include "mgtraj/evaluate.hpp"
#include "mgtraj/manifest.hpp"
#include "mgtraj/threading.hpp"
#include "mgtraj/trainer.hpp"

using namespace mgtraj;
using namespace mgtraj::net;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mgtraj_io_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Model small_model(std::uint64_t seed = 3) {
  ModelConfig cfg;
  cfg.kind = ModelKind::mg_gan;
  cfg.n_gens = 2;
  return Model::build(cfg, seed);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void spit(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  REQUIRE(out.good());
  out << content;
}

// Rewrites one field of the first tensor entry (or a top-level field) in a
// saved checkpoint manifest.
void patch_manifest(const fs::path& dir, const std::function<void(nlohmann::json&)>& edit) {
  nlohmann::json j = nlohmann::json::parse(slurp(dir / "manifest.json"));
  edit(j);
  spit(dir / "manifest.json", j.dump(2) + "\n");
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MGTRAJ_BIN) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("checkpoint load rejects missing and corrupt files") {
  const fs::path dir = fresh_dir("ckpt_errors");
  CHECK_THROWS_AS(load_checkpoint((dir / "nope").string()), IoError);

  Model m = small_model();
  save_checkpoint(m, dir.string());
  CHECK_NOTHROW(load_checkpoint(dir.string()));

  SUBCASE("malformed manifest json") {
    spit(dir / "manifest.json", "{ not json");
    CHECK_THROWS_AS(load_checkpoint(dir.string()), IoError);
  }
  SUBCASE("unsupported format version") {
    patch_manifest(dir, [](nlohmann::json& j) { j["format_version"] = 99; });
    CHECK_THROWS_AS(load_checkpoint(dir.string()), IoError);
  }
  SUBCASE("config hash mismatch") {
    patch_manifest(dir, [](nlohmann::json& j) { j["config_hash"] = "0000000000000000"; });
    CHECK_THROWS_AS(load_checkpoint(dir.string()), ConfigError);
  }
  SUBCASE("tensor name mismatch") {
    patch_manifest(dir, [](nlohmann::json& j) { j["tensors"][0]["name"] = "enc.dyn.bogus"; });
    CHECK_THROWS_AS(load_checkpoint(dir.string()), ConfigError);
  }
  SUBCASE("tensor shape mismatch") {
    patch_manifest(dir, [](nlohmann::json& j) {
      j["tensors"][0]["shape"] = std::vector<std::size_t>{1, 1};
    });
    CHECK_THROWS_AS(load_checkpoint(dir.string()), ConfigError);
  }
  SUBCASE("unsupported dtype") {
    patch_manifest(dir, [](nlohmann::json& j) { j["tensors"][0]["dtype"] = "f64"; });
    CHECK_THROWS_AS(load_checkpoint(dir.string()), ConfigError);
  }
  SUBCASE("offset disagreement") {
    patch_manifest(dir, [](nlohmann::json& j) { j["tensors"][1]["offset"] = 2; });
    CHECK_THROWS_AS(load_checkpoint(dir.string()), ConfigError);
  }
  SUBCASE("missing tensor entry") {
    patch_manifest(dir, [](nlohmann::json& j) { j["tensors"].erase(0); });
    CHECK_THROWS_AS(load_checkpoint(dir.string()), ConfigError);
  }
  SUBCASE("truncated params.bin") {
    const std::string bin = slurp(dir / "params.bin");
    spit(dir / "params.bin", bin.substr(0, bin.size() - 5));
    CHECK_THROWS_AS(load_checkpoint(dir.string()), IoError);
  }
  SUBCASE("trailing bytes in params.bin") {
    std::ofstream out(dir / "params.bin", std::ios::binary | std::ios::app);
    out << "XY";
    out.close();
    CHECK_THROWS_AS(load_checkpoint(dir.string()), IoError);
  }
  SUBCASE("missing params.bin") {
    fs::remove(dir / "params.bin");
    CHECK_THROWS_AS(load_checkpoint(dir.string()), IoError);
  }
}

TEST_CASE("train config loads from a file and rejects a missing one") {
  const fs::path dir = fresh_dir("cfg");
  spit(dir / "cfg.json",
       R"({"model":"mg_gan","n_gens":3,"q":5,"epochs":2,"seed":9,"data":"d","out":"o"})");
  const train::TrainConfig cfg = train::load_train_config((dir / "cfg.json").string());
  CHECK(cfg.model == "mg_gan");
  CHECK(cfg.n_gens == 3);
  CHECK(cfg.q == 5);
  CHECK(cfg.epochs == 2);
  CHECK(cfg.seed == 9);
  CHECK_THROWS_AS(train::load_train_config((dir / "absent.json").string()), IoError);
}

TEST_CASE("fnv1a64 and hex16 reference values") {
  // FNV-1a 64-bit test vectors (offset basis and the published hash of "a").
  CHECK(fnv1a64_str("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64_str("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(hex16(0xcbf29ce484222325ULL) == "cbf29ce484222325");
  CHECK(hex16(0x1ULL) == "0000000000000001");
  CHECK(hex16(0x1ULL).size() == 16);
}

TEST_CASE("dataset content hash tracks file content") {
  const fs::path dir = fresh_dir("ds_hash");
  CHECK_THROWS_AS(dataset_content_hash(dir.string()), IoError);

  spit(dir / "trajectories.csv", "scene_id,ped_id,t,x,y,split\n");
  spit(dir / "occupancy.pgm", "P5 1 1 255 x");
  const std::string h1 = dataset_content_hash(dir.string());
  CHECK(h1.size() == 16);
  CHECK(h1.find_first_not_of("0123456789abcdef") == std::string::npos);

  CHECK(dataset_content_hash(dir.string()) == h1);  // stable
  spit(dir / "trajectories.csv", "scene_id,ped_id,t,x,y,split\n0,0,0,1.0,2.0,obs\n");
  CHECK(dataset_content_hash(dir.string()) != h1);
}

TEST_CASE("experiment manifest round-trips its fields") {
  const fs::path dir = fresh_dir("manifest");
  ExperimentManifest m;
  m.command = "train";
  m.config_hash = hex16(fnv1a64_str("cfg"));
  m.seed = 77;
  m.dataset_path = "data/junction";
  m.dataset_hash = hex16(fnv1a64_str("ds"));
  m.checkpoint_path = "runs/a";
  m.tool_version = kToolVersion;
  write_experiment_manifest(m, (dir / "experiment.json").string());

  const nlohmann::json j = nlohmann::json::parse(slurp(dir / "experiment.json"));
  CHECK(j.at("command") == "train");
  CHECK(j.at("config_hash").get<std::string>().size() == 16);
  CHECK(j.at("seed") == 77);
  CHECK(j.at("dataset_path") == "data/junction");
  CHECK(j.at("dataset_hash").get<std::string>().size() == 16);
  CHECK(j.at("checkpoint_path") == "runs/a");
  CHECK(j.at("tool_version") == kToolVersion);
}

TEST_CASE("metrics json matches the documented schema") {
  EvalReport r;
  r.ade = 0.25;
  r.fde = 0.5;
  r.precision = 0.75;
  r.recall = 0.9;
  r.f1 = 0.8182;
  r.k = 20;
  r.r_max = 2.0;
  r.n_eval = 128;
  const nlohmann::json j = nlohmann::json::parse(metrics_json(r));
  for (const char* key : {"ade", "fde", "precision", "recall", "f1", "k", "r_max", "n_eval"}) {
    CHECK(j.contains(key));
  }
  CHECK(j.at("ade").get<double>() == doctest::Approx(0.25));
  CHECK(j.at("k").get<int>() == 20);
  CHECK(j.at("n_eval").get<int>() == 128);
  CHECK(j.size() == 8);
}

TEST_CASE("train log appends one header and one row per epoch") {
  const fs::path dir = fresh_dir("trainlog");
  const std::string path = (dir / "train_log.csv").string();
  train::EpochLog log;
  log.d_loss = 1.386294;
  log.g_adv = 0.693147;
  log.g_cl = 1.2;
  log.g_bom = 0.5;
  log.pm_loss = 0.9;
  train::append_train_log(path, 1, log);
  train::append_train_log(path, 2, log);

  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,d_loss,g_adv,g_cl,g_bom,pm_loss");
  std::getline(in, line);
  CHECK(line == "1,1.386294,0.693147,1.200000,0.500000,0.900000");
  std::getline(in, line);
  CHECK(line == "2,1.386294,0.693147,1.200000,0.500000,0.900000");
  CHECK(!std::getline(in, line));
}

TEST_CASE("worker thread count respects the environment cap") {
  ::setenv("MGTRAJ_THREADS", "2", 1);
  CHECK(worker_threads() == 2);
  ::setenv("MGTRAJ_THREADS", "0", 1);
  CHECK(worker_threads() >= 1);  // clamped
  ::unsetenv("MGTRAJ_THREADS");
  CHECK(worker_threads() >= 1);
}

TEST_CASE("cli exit codes: 0 success, 2 usage or config errors") {
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("gen-data --help") == 0);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("gen-data --scene mars --n 10 --seed 1 --out /tmp/mgtraj_io_tests/x") == 2);
  CHECK(run_cli("train --config /tmp/mgtraj_io_tests/absent.json") == 2);
  CHECK(run_cli("eval --ckpt /tmp/mgtraj_io_tests/nockpt --data /tmp/mgtraj_io_tests/nodata") == 2);
}

TEST_CASE("cli gen-data writes the full artifact set deterministically") {
  const fs::path a = fresh_dir("gen_a");
  const fs::path b = fresh_dir("gen_b");
  REQUIRE(run_cli("gen-data --scene circle --n 40 --seed 3 --out " + a.string()) == 0);
  REQUIRE(run_cli("gen-data --scene circle --n 40 --seed 3 --out " + b.string()) == 0);
  for (const char* name : {"trajectories.csv", "occupancy.pgm", "occupancy.json", "gt_index.json",
                           "experiment.json"}) {
    CAPTURE(name);
    CHECK(fs::exists(a / name));
    if (std::string(name) == "experiment.json") continue;  // records the out path
    CHECK(slurp(a / name) == slurp(b / name));
  }
  // 20 rows per record.
  std::ifstream in(a / "trajectories.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "scene_id,ped_id,t,x,y,split");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 40 * 20);

  // A different seed changes the dataset hash recorded in the manifest.
  const fs::path c = fresh_dir("gen_c");
  REQUIRE(run_cli("gen-data --scene circle --n 40 --seed 4 --out " + c.string()) == 0);
  const auto ja = nlohmann::json::parse(slurp(a / "experiment.json"));
  const auto jc = nlohmann::json::parse(slurp(c / "experiment.json"));
  CHECK(ja.at("dataset_hash") != jc.at("dataset_hash"));
  CHECK(ja.at("dataset_hash").get<std::string>() == dataset_content_hash(a.string()));
}

TEST_CASE("cli surfaces numeric failures as exit code 3") {
  const fs::path data = fresh_dir("numfail_data");
  REQUIRE(run_cli("gen-data --scene circle --n 30 --seed 5 --out " + data.string()) == 0);

  Model m = small_model();
  m.params.find("pm.w1")->value.data[0] = std::numeric_limits<double>::quiet_NaN();
  const fs::path ckpt = fresh_dir("numfail_ckpt");
  save_checkpoint(m, ckpt.string());

  CHECK(run_cli("eval --ckpt " + ckpt.string() + " --data " + data.string() + " --n-eval 4") == 3);
}
