#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "mgtraj/metrics.hpp"
#include "mgtraj/rng.hpp"

using namespace mgtraj;
using namespace mgtraj::metrics;
using mgtraj::sim::Dataset;
using mgtraj::sim::TrajectoryRecord;

namespace {

Traj line(Vec2 start, Vec2 step, std::size_t n = 12) {
  Traj t(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = {start.x + step.x * static_cast<double>(i), start.y + step.y * static_cast<double>(i)};
  }
  return t;
}

Traj shifted(const Traj& t, Vec2 d) {
  Traj out = t;
  for (Vec2& p : out) p += d;
  return out;
}

Traj random_walk(Rng& rng, Vec2 start, double step_sd, std::size_t n = 12) {
  Traj t(n);
  Vec2 p = start;
  for (std::size_t i = 0; i < n; ++i) {
    p += {rng.normal() * step_sd, rng.normal() * step_sd};
    t[i] = p;
  }
  return t;
}

// Definition-level re-implementation: precompute the full pairwise coverage
// table with squared distances, then fold. Used to cross-check the library.
int oracle_inside(const Traj& phi, const std::vector<Traj>& support, double r_max) {
  if (support.empty()) return 0;
  const std::size_t horizon = phi.size();
  std::vector<char> covered(horizon, 0);
  for (const Traj& s : support) {
    for (std::size_t t = 0; t < horizon; ++t) {
      const double r = r_max * static_cast<double>(t + 1) / static_cast<double>(horizon);
      const double d2 = sq(phi[t].x - s[t].x) + sq(phi[t].y - s[t].y);
      if (d2 <= r * r) covered[t] = 1;
    }
  }
  for (char c : covered) {
    if (!c) return 0;
  }
  return 1;
}

double oracle_fraction_inside(const std::vector<Traj>& members, const std::vector<Traj>& support,
                              double r_max) {
  double hits = 0.0;
  for (const Traj& m : members) hits += oracle_inside(m, support, r_max);
  return hits / static_cast<double>(members.size());
}

// Observed segment walking `heading` at `speed` m/s from `start`; the future
// continues from the last observed point along `future_dir` (unnormalized
// per-frame displacement), which lets tests place futures arbitrarily.
TrajectoryRecord make_record(Vec2 start, Vec2 heading, double speed, Vec2 future_step,
                             int scene_id = 0, int ped_id = 0) {
  TrajectoryRecord r;
  r.scene_id = scene_id;
  r.ped_id = ped_id;
  r.t0 = 0;
  const double n = heading.norm();
  const Vec2 step = {heading.x / n * speed * sim::kFrameDt, heading.y / n * speed * sim::kFrameDt};
  Vec2 p = start;
  for (std::size_t t = 0; t < sim::kObsLen; ++t) {
    r.positions[t] = p;
    p += step;
  }
  Vec2 f = r.positions[sim::kObsLen - 1];
  for (std::size_t t = sim::kObsLen; t < sim::kRecordLen; ++t) {
    f += future_step;
    r.positions[t] = f;
  }
  return r;
}

}  // namespace

TEST_CASE("ade and fde worked examples") {
  const Traj truth = line({0.0, 0.0}, {0.5, 0.0});
  CHECK(ade_min_k({truth}, truth) == doctest::Approx(0.0));
  CHECK(fde_min_k({truth}, truth) == doctest::Approx(0.0));

  // Constant 1 m offset: every step contributes 1.
  CHECK(ade_min_k({shifted(truth, {0.0, 1.0})}, truth) == doctest::Approx(1.0));

  // Min over the set picks the closer prediction.
  const std::vector<Traj> two = {shifted(truth, {0.0, 2.0}), shifted(truth, {0.5, 0.0})};
  CHECK(ade_min_k(two, truth) == doctest::Approx(0.5));
  const std::vector<Traj> fde_two = {shifted(truth, {3.0, 0.0}), shifted(truth, {0.0, 1.2})};
  CHECK(fde_min_k(fde_two, truth) == doctest::Approx(1.2));
}

TEST_CASE("ade and fde reject malformed inputs") {
  const Traj truth = line({0.0, 0.0}, {0.5, 0.0});
  Traj short_pred = truth;
  short_pred.pop_back();
  CHECK_THROWS_AS(ade_min_k({short_pred}, truth), DimensionError);
  CHECK_THROWS_AS(fde_min_k({short_pred}, truth), DimensionError);
  CHECK_THROWS_AS(ade_min_k({}, truth), ConfigError);
  CHECK_THROWS_AS(ade_min_k({truth}, Traj{}), ConfigError);
  CHECK_THROWS_AS(fde_min_k({}, truth), ConfigError);
}

TEST_CASE("ade never increases when predictions are added") {
  Rng rng(4);
  const Traj truth = random_walk(rng, {0.0, 0.0}, 0.4);
  std::vector<Traj> preds;
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 30; ++i) {
    preds.push_back(random_walk(rng, {rng.normal(), rng.normal()}, 0.4));
    const double cur = ade_min_k(preds, truth);
    CHECK(cur <= prev + 1e-15);
    CHECK(cur >= 0.0);
    prev = cur;
  }
}

TEST_CASE("manifold score worked examples") {
  const Traj truth = line({0.0, 0.0}, {0.5, 0.0});

  // A support member covers itself at radius 0+.
  CHECK(manifold_score(truth, {truth}, 2.0) == 1);

  // 3 m off: even the final radius (2.0) cannot reach it.
  CHECK(manifold_score(shifted(truth, {0.0, 3.0}), {truth}, 2.0) == 0);

  // 1 m off: the shrunk early radii r_max*t/12 stay below 1 until t=6.
  CHECK(manifold_score(shifted(truth, {0.0, 1.0}), {truth}, 2.0) == 0);
  CHECK(manifold_score(shifted(truth, {0.0, 1.0}), {truth}, 13.0) == 1);

  // Boundary is inclusive: the t=1 radius equals the offset exactly.
  CHECK(manifold_score(shifted(truth, {0.0, 1.0}), {truth}, 12.0) == 1);
  CHECK(manifold_score(shifted(truth, {0.0, 1.0}), {truth}, 11.99) == 0);

  CHECK(manifold_score(truth, {}, 2.0) == 0);
  CHECK_THROWS_AS(manifold_score(Traj{}, {truth}, 2.0), ConfigError);
  CHECK_THROWS_AS(manifold_score(truth, {truth}, 0.0), ConfigError);
}

TEST_CASE("precision and recall worked examples") {
  const Traj a = line({0.0, 0.0}, {0.5, 0.0});
  const Traj b = line({0.0, 4.0}, {0.5, 0.0});  // second mode, 4 m apart
  const std::vector<Traj> gt = {a, b};

  CHECK(precision(gt, gt, 2.0) == doctest::Approx(1.0));
  CHECK(recall(gt, gt, 2.0) == doctest::Approx(1.0));

  // Everything generated far outside the data manifold.
  const std::vector<Traj> far = {shifted(a, {100.0, 0.0}), shifted(b, {100.0, 0.0})};
  CHECK(precision(far, gt, 2.0) == doctest::Approx(0.0));
  CHECK(recall(far, gt, 2.0) == doctest::Approx(0.0));

  // Half the generated set lies on the manifold.
  const std::vector<Traj> half = {a, shifted(a, {100.0, 0.0})};
  CHECK(precision(half, gt, 2.0) == doctest::Approx(0.5));

  // Generated covers only one of two ground-truth modes.
  const std::vector<Traj> one_mode = {a, a, a};
  CHECK(recall(one_mode, gt, 2.0) == doctest::Approx(0.5));
  CHECK(precision(one_mode, gt, 2.0) == doctest::Approx(1.0));

  CHECK_THROWS_AS(precision({}, gt, 2.0), ConfigError);
  CHECK_THROWS_AS(recall(gt, {}, 2.0), ConfigError);
}

TEST_CASE("f1 worked examples") {
  CHECK(f1(1.0, 1.0) == doctest::Approx(1.0));
  CHECK(f1(0.71, 0.89) == doctest::Approx(0.79).epsilon(0.01));
  CHECK(f1(1.0, 0.0) == doctest::Approx(0.0));
  CHECK(f1(0.0, 0.0) == doctest::Approx(0.0));
  CHECK(f1(0.5, 0.5) == doctest::Approx(0.5));
  CHECK_THROWS_AS(f1(1.2, 0.5), ConfigError);
  CHECK_THROWS_AS(f1(0.5, -0.1), ConfigError);
}

TEST_CASE("precision and recall match a definition-level oracle on 200 random set pairs") {
  Rng rng(77);
  for (int pair = 0; pair < 200; ++pair) {
    const std::size_t na = 1 + rng.uniform_int(7);
    const std::size_t nb = 1 + rng.uniform_int(7);
    // Ground truth clusters near the origin; generated samples perturb ground
    // truth members by 0..2 m so scores land strictly between 0 and 1 often.
    std::vector<Traj> gt;
    for (std::size_t i = 0; i < nb; ++i) {
      gt.push_back(random_walk(rng, {rng.normal() * 0.5, rng.normal() * 0.5}, 0.3));
    }
    std::vector<Traj> gen;
    for (std::size_t i = 0; i < na; ++i) {
      const Traj& base = gt[rng.uniform_int(gt.size())];
      gen.push_back(shifted(base, {rng.normal() * rng.uniform() * 2.0,
                                   rng.normal() * rng.uniform() * 2.0}));
    }
    const double r_max = 0.5 + 2.5 * rng.uniform();
    CHECK(precision(gen, gt, r_max) ==
          doctest::Approx(oracle_fraction_inside(gen, gt, r_max)).epsilon(1e-12));
    CHECK(recall(gen, gt, r_max) ==
          doctest::Approx(oracle_fraction_inside(gt, gen, r_max)).epsilon(1e-12));
  }
}

TEST_CASE("precision and recall are invariant to duplicating support members") {
  Rng rng(9);
  const Traj a = random_walk(rng, {0.0, 0.0}, 0.4);
  const Traj b = random_walk(rng, {1.0, 0.0}, 0.4);
  const Traj c = random_walk(rng, {0.5, 0.5}, 0.4);
  const std::vector<Traj> gen = {a, c};
  const std::vector<Traj> gt = {a, b};
  const std::vector<Traj> gt_dup = {a, b, b, a, b};
  CHECK(precision(gen, gt, 1.5) == doctest::Approx(precision(gen, gt_dup, 1.5)));
  const std::vector<Traj> gen_dup = {a, a, c, c, a, c};
  CHECK(recall(gen, gt, 1.5) == doctest::Approx(recall(gen_dup, gt, 1.5)));
}

TEST_CASE("precision and recall never decrease as r_max grows") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Traj> gen, gt;
    for (int i = 0; i < 5; ++i) {
      gt.push_back(random_walk(rng, {rng.normal(), rng.normal()}, 0.3));
      gen.push_back(random_walk(rng, {rng.normal(), rng.normal()}, 0.3));
    }
    double prev_p = 0.0, prev_r = 0.0;
    for (double r_max : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
      const double p = precision(gen, gt, r_max);
      const double r = recall(gen, gt, r_max);
      CHECK(p >= prev_p);
      CHECK(r >= prev_r);
      prev_p = p;
      prev_r = r;
    }
    // A radius beyond the largest pairwise gap (rescaled to the t=1 shrink)
    // covers everything.
    double max_gap = 0.0;
    for (const Traj& a : gen) {
      for (const Traj& b : gt) {
        for (std::size_t t = 0; t < a.size(); ++t) {
          max_gap = std::max(max_gap, std::hypot(a[t].x - b[t].x, a[t].y - b[t].y));
        }
      }
    }
    const double huge = max_gap * static_cast<double>(gt.front().size()) + 1.0;
    CHECK(precision(gen, gt, huge) == doctest::Approx(1.0));
    CHECK(recall(gen, gt, huge) == doctest::Approx(1.0));
  }
}

TEST_CASE("count_modes sees one mode in a singleton dataset") {
  Dataset ds;
  ds.records.push_back(make_record({0.0, 0.0}, {1.0, 0.0}, 1.2, {0.48, 0.0}));
  const auto report = count_modes(ds, ds.records[0], ModeCountThresholds{});
  CHECK(report.n_similar == 1);
  REQUIRE(report.per_timestep.size() == sim::kPredLen);
  for (double m : report.per_timestep) CHECK(m == doctest::Approx(1.0));
  CHECK(report.average == doctest::Approx(1.0));
}

TEST_CASE("count_modes separates two far-apart futures at every timestep") {
  Dataset ds;
  // Identical observed segments; futures diverge by ~100 m laterally.
  ds.records.push_back(make_record({0.0, 0.0}, {1.0, 0.0}, 1.2, {0.48, 0.0}, 0, 0));
  ds.records.push_back(make_record({0.0, 0.3}, {1.0, 0.0}, 1.2, {0.48, 100.0}, 0, 1));
  const auto report = count_modes(ds, ds.records[0], ModeCountThresholds{});
  CHECK(report.n_similar == 2);
  for (double m : report.per_timestep) CHECK(m == doctest::Approx(2.0));
  CHECK(report.average == doctest::Approx(2.0));
}

TEST_CASE("count_modes filters by start, heading, and speed") {
  Dataset ds;
  ds.records.push_back(make_record({0.0, 0.0}, {1.0, 0.0}, 1.2, {0.48, 0.0}, 0, 0));
  ds.records.push_back(make_record({50.0, 0.0}, {1.0, 0.0}, 1.2, {0.48, 0.0}, 0, 1));  // far start
  ds.records.push_back(make_record({0.0, 0.5}, {-1.0, 0.0}, 1.2, {0.48, 0.0}, 0, 2));  // reversed
  ds.records.push_back(make_record({0.0, -0.5}, {1.0, 0.0}, 3.0, {0.48, 0.0}, 0, 3));  // sprinter
  const auto report = count_modes(ds, ds.records[0], ModeCountThresholds{});
  CHECK(report.n_similar == 1);
}

TEST_CASE("count_modes drops trajectories with close encounters") {
  Dataset ds;
  ds.records.push_back(make_record({0.0, 0.0}, {1.0, 0.0}, 1.2, {0.48, 0.0}, 0, 0));
  // Two records in one scene walking 0.1 m apart, tagged as mutual neighbors.
  auto a = make_record({0.0, 0.4}, {1.0, 0.0}, 1.2, {0.48, 0.0}, 7, 1);
  auto b = make_record({0.0, 0.5}, {1.0, 0.0}, 1.2, {0.48, 0.0}, 7, 2);
  for (std::size_t t = 0; t < sim::kRecordLen; ++t) {
    a.neighbor_ids[t] = {2};
    b.neighbor_ids[t] = {1};
  }
  ds.records.push_back(a);
  ds.records.push_back(b);
  const auto crowded = count_modes(ds, ds.records[0], ModeCountThresholds{});
  CHECK(crowded.n_similar == 1);

  // Same geometry without the neighbor tags keeps all three.
  Dataset clean = ds;
  for (auto& r : clean.records) {
    for (auto& ids : r.neighbor_ids) ids.clear();
  }
  const auto open = count_modes(clean, clean.records[0], ModeCountThresholds{});
  CHECK(open.n_similar == 3);
}

TEST_CASE("count_modes reports zero modes when nothing is similar") {
  Dataset ds;
  ds.records.push_back(make_record({50.0, 0.0}, {1.0, 0.0}, 1.2, {0.48, 0.0}));
  const auto anchor = make_record({0.0, 0.0}, {1.0, 0.0}, 1.2, {0.48, 0.0});
  const auto report = count_modes(ds, anchor, ModeCountThresholds{});
  CHECK(report.n_similar == 0);
  CHECK(report.average == doctest::Approx(0.0));
  for (double m : report.per_timestep) CHECK(m == doctest::Approx(0.0));
  CHECK_THROWS_AS(count_modes(Dataset{}, anchor, ModeCountThresholds{}), ConfigError);
}

TEST_CASE("junction split groups branch into multiple modes, corridor groups stay unimodal") {
  const auto sc = sim::build_junction_scene(sim::JunctionKind::three_way, 4.2, 3);
  const Dataset ds = sim::simulate_dataset(sc, 3000, 2, 13, 4);

  // Mode structure lives inside a conditional ground-truth group: records that
  // share an observation key fan out only where routes branch. Counting over
  // the raw 2 m start neighborhood instead would chain the branches together
  // through slower/offset records still near the junction center. Split
  // groups are taken at the three-exit crossroads (junctions[0]); the
  // T-junction branches two ways and would only dilute the window.
  const Vec2 crossroads = sc.junctions.front();
  double split_sum = 0.0, corridor_sum = 0.0;
  int split_groups = 0, corridor_groups = 0;
  for (const auto& [key, members] : ds.gt.groups) {
    if (members.size() < 5) continue;
    const auto& rec0 = ds.records[members.front()];
    const Vec2 last = rec0.positions[sim::kObsLen - 1];
    const Vec2 step = last - rec0.positions[sim::kObsLen - 2];
    if (step.norm() < 1e-9) continue;
    Vec2 nearest = sc.junctions.front();
    for (const Vec2& j : sc.junctions) {
      if ((j - last).norm() < (nearest - last).norm()) nearest = j;
    }
    const auto inbound = [&](const Vec2& j) {
      const Vec2 to = j - last;
      return to.norm() > 1e-9 && to.normalized().dot(step.normalized()) > 0.5;
    };

    const bool split = (crossroads - last).norm() <= 2.0 && inbound(crossroads);
    const bool corridor = (nearest - last).norm() >= 6.0 && inbound(nearest);
    if (!split && !corridor) continue;

    Dataset group;
    group.grid = ds.grid;
    for (std::size_t i : members) group.records.push_back(ds.records[i]);
    // count_modes may still drop group members (close encounters, outlier
    // speed), so n_similar only bounds from above.
    const auto report = count_modes(group, group.records.front(), ModeCountThresholds{});
    REQUIRE(report.n_similar >= 1);
    REQUIRE(report.n_similar <= members.size());

    if (split) {
      split_sum += report.average;
      ++split_groups;
      // Futures overlap before the branch and separate after it.
      CHECK(report.per_timestep.front() <= 3.0);
      CHECK(report.average >= 1.0);
    } else {
      corridor_sum += report.average;
      ++corridor_groups;
    }
  }
  REQUIRE(split_groups >= 3);
  REQUIRE(corridor_groups >= 3);
  CHECK(split_sum / split_groups >= 1.8);
  CHECK(split_sum / split_groups <= 3.5);
  CHECK(corridor_sum / corridor_groups >= 1.0);
  CHECK(corridor_sum / corridor_groups <= 1.5);
}
