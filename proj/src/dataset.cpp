#include "mgtraj/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "mgtraj/rng.hpp"
#include "mgtraj/threading.hpp"

namespace mgtraj::sim {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

// Coordinates are snapped to 6 decimals the moment they are recorded so the
// in-memory dataset and its CSV round-trip are numerically identical.
double q6(double v) { return std::round(v * 1e6) / 1e6; }
Vec2 q6(const Vec2& v) { return {q6(v.x), q6(v.y)}; }

}  // namespace

double TrajectoryRecord::mean_step_displacement() const {
  double acc = 0.0;
  for (std::size_t t = 1; t < kRecordLen; ++t) {
    acc += (positions[t] - positions[t - 1]).norm();
  }
  return acc / static_cast<double>(kRecordLen - 1);
}

ObsFuture split_obs_future(const TrajectoryRecord& r) {
  ObsFuture out;
  std::copy_n(r.positions.begin(), kObsLen, out.obs.begin());
  std::copy_n(r.positions.begin() + kObsLen, kPredLen, out.future.begin());
  return out;
}

ObsKey observation_key(const TrajectoryRecord& r) {
  const Vec2& last = r.positions[kObsLen - 1];
  const Vec2 d = last - r.positions[kObsLen - 2];
  double heading = std::atan2(d.y, d.x);
  if (heading < 0.0) heading += 2.0 * kPi;
  ObsKey k;
  k.ix = static_cast<long>(std::floor(last.x / 0.5));
  k.iy = static_cast<long>(std::floor(last.y / 0.5));
  k.heading_bucket = static_cast<int>(std::floor(heading / (kPi / 6.0))) % 12;
  return k;
}

GroundTruthSet build_ground_truth(const std::vector<TrajectoryRecord>& records) {
  GroundTruthSet gt;
  for (std::size_t i = 0; i < records.size(); ++i) {
    gt.groups[observation_key(records[i])].push_back(i);
  }
  return gt;
}

namespace {

struct SimAgent {
  Agent agent;
  std::size_t route = 0;
  std::size_t wp = 0;
  std::vector<Vec2> frames;
  std::vector<std::size_t> switch_frames;  // frame index at each junction waypoint pass
  bool failed = false;
};

struct EpisodeResult {
  std::vector<TrajectoryRecord> records;
  SimLog log;
};

EpisodeResult run_episode(const Scene& scene, std::uint64_t seed, std::uint64_t episode,
                          std::size_t max_concurrent) {
  Rng rng = Rng::stream(seed, episode);
  EpisodeResult out;
  out.log.episodes = 1;

  std::vector<double> probs;
  for (const auto& r : scene.routes) probs.push_back(r.probability);

  const std::size_t n_agents =
      (max_concurrent >= 2 && rng.uniform() < 0.5) ? std::size_t{2} : std::size_t{1};
  std::vector<SimAgent> sims;
  for (std::size_t s = 0; s < n_agents; ++s) {
    SimAgent sa;
    sa.route = rng.categorical(probs);
    const Route& route = scene.routes[sa.route];
    Vec2 pos;
    bool placed = false;
    for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
      pos = {rng.uniform(route.spawn.lo.x, route.spawn.hi.x),
             rng.uniform(route.spawn.lo.y, route.spawn.hi.y)};
      placed = scene.grid.walkable_at(pos);
      for (const auto& other : sims) {
        if ((pos - other.agent.position).norm() < 0.8) placed = false;
      }
    }
    if (!placed) continue;
    sa.agent.position = pos;
    sa.agent.preferred_speed = std::clamp(rng.normal(1.3, 0.15), 0.9, 1.7);
    sa.agent.goal = route.waypoints.front();
    sa.agent.velocity = (route.waypoints.front() - pos).normalized() * sa.agent.preferred_speed;
    sa.agent.active = true;
    sims.push_back(std::move(sa));
  }
  if (sims.empty()) return out;

  const double dt = 0.1;
  const int subsample = 4;  // 0.1 s -> 0.4 s frames
  const int max_steps = 1600;

  std::vector<Agent> agents(sims.size());
  for (std::size_t i = 0; i < sims.size(); ++i) agents[i] = sims[i].agent;

  SocialForceParams prm;
  for (std::size_t i = 0; i < sims.size(); ++i) sims[i].frames.push_back(q6(agents[i].position));

  for (int step = 1; step <= max_steps; ++step) {
    bool any_active = false;
    for (std::size_t i = 0; i < sims.size(); ++i) {
      if (!agents[i].active) continue;
      any_active = true;
      SimAgent& sa = sims[i];
      const Route& route = scene.routes[sa.route];
      while (sa.wp + 1 < route.waypoints.size() &&
             (agents[i].position - route.waypoints[sa.wp]).norm() < 1.0) {
        ++sa.wp;
        sa.switch_frames.push_back(sa.frames.size());  // every non-goal waypoint is a junction
      }
      agents[i].goal = route.waypoints[sa.wp];
      if (sa.wp + 1 == route.waypoints.size() &&
          (route.goal.contains(agents[i].position) ||
           (agents[i].position - route.waypoints.back()).norm() < 1.0)) {
        agents[i].active = false;
      }
    }
    if (!any_active) break;
    social_force_step(agents, scene.grid, prm, dt, out.log);
    if (step % subsample == 0) {
      for (std::size_t i = 0; i < sims.size(); ++i) {
        if (agents[i].active) sims[i].frames.push_back(q6(agents[i].position));
      }
    }
  }
  for (std::size_t i = 0; i < sims.size(); ++i) {
    if (agents[i].active) {
      sims[i].failed = true;  // never reached the goal within budget
      ++out.log.discarded_agents;
    }
  }

  // Anchored extraction. Each junction passage yields a window whose
  // observation ends a few frames short of the waypoint switch, placing the
  // branch decision inside the prediction horizon; each agent also yields one
  // corridor window whose future stays clear of any branch point. Agents in
  // the same episode additionally get records at each other's anchors when
  // their frames cover them, so (scene_id, t0)-matched neighbors exist.
  std::vector<std::set<std::size_t>> anchors(sims.size());
  auto propose = [&](std::size_t t0) {
    for (std::size_t i = 0; i < sims.size(); ++i) {
      if (!sims[i].failed && t0 + kRecordLen <= sims[i].frames.size()) anchors[i].insert(t0);
    }
  };
  for (std::size_t i = 0; i < sims.size(); ++i) {
    const SimAgent& sa = sims[i];
    if (sa.failed) continue;
    for (std::size_t s : sa.switch_frames) {
      const std::size_t gap = 3 + rng.uniform_int(5);  // observation ends 3-7 frames early
      const std::size_t egap = rng.uniform_int(3);     // and again right at the branch point
      if (s >= gap + kObsLen - 1) propose(s - gap - (kObsLen - 1));
      if (s >= egap + kObsLen - 1) propose(s - egap - (kObsLen - 1));
    }
    std::vector<std::size_t> corridor;
    if (!sa.switch_frames.empty()) {
      const std::size_t first = sa.switch_frames.front();
      for (std::size_t c = 0; c + kRecordLen <= first; ++c) corridor.push_back(c);
      const std::size_t after = sa.switch_frames.back() + 3;  // clear of the turn arc
      for (std::size_t c = after; c + kRecordLen <= sa.frames.size(); ++c) corridor.push_back(c);
    }
    if (!corridor.empty()) propose(corridor[rng.uniform_int(corridor.size())]);
  }

  for (std::size_t i = 0; i < sims.size(); ++i) {
    const SimAgent& sa = sims[i];
    for (std::size_t t0 : anchors[i]) {
      TrajectoryRecord rec;
      rec.scene_id = static_cast<int>(episode);
      rec.ped_id = static_cast<int>(episode * 2 + i);
      rec.t0 = static_cast<int>(t0);
      rec.route_id = static_cast<int>(sa.route);
      for (std::size_t t = 0; t < kRecordLen; ++t) {
        rec.positions[t] = sa.frames[t0 + t];
      }
      out.records.push_back(std::move(rec));
    }
  }
  return out;
}

// Populates neighbor ids from co-recorded windows: records sharing
// (scene_id, t0) with a different pedestrian are mutual neighbors for the
// whole window. Applied after trimming and after loading so both paths agree.
void link_neighbors(std::vector<TrajectoryRecord>& records) {
  std::map<std::pair<int, int>, std::vector<std::size_t>> by_window;
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (auto& step : records[i].neighbor_ids) step.clear();
    by_window[{records[i].scene_id, records[i].t0}].push_back(i);
  }
  for (const auto& [key, members] : by_window) {
    for (std::size_t a : members) {
      for (std::size_t b : members) {
        if (a == b) continue;
        for (auto& step : records[a].neighbor_ids) step.push_back(records[b].ped_id);
      }
    }
  }
}

}  // namespace

Dataset simulate_dataset(const Scene& scene, std::size_t n_trajectories,
                         std::size_t max_agents_concurrent, std::uint64_t seed, int threads) {
  if (n_trajectories == 0) throw ConfigError("simulate_dataset: n_trajectories must be positive");
  if (max_agents_concurrent > 2) {
    throw ConfigError("simulate_dataset: at most 2 concurrent agents supported");
  }
  Dataset d;
  d.grid = scene.grid;

  const std::size_t chunk = 64;
  std::uint64_t next_episode = 0;
  while (d.records.size() < n_trajectories) {
    std::vector<EpisodeResult> results(chunk);
    parallel_for(chunk, threads, [&](std::size_t i) {
      results[i] = run_episode(scene, seed, next_episode + i, max_agents_concurrent);
    });
    for (auto& r : results) {
      for (auto& rec : r.records) d.records.push_back(std::move(rec));
      d.log.wall_projections += r.log.wall_projections;
      d.log.discarded_agents += r.log.discarded_agents;
      d.log.episodes += r.log.episodes;
    }
    next_episode += chunk;
    if (next_episode > 2'000'000) {
      throw NumericError("simulate_dataset: episode budget exhausted before reaching target");
    }
  }
  d.records.resize(n_trajectories);
  link_neighbors(d.records);
  d.gt = build_ground_truth(d.records);
  return d;
}

Dataset make_circle_toy(std::uint64_t seed, std::size_t n_trajectories, double radius_m,
                        double jitter_sd_m) {
  Dataset d;
  const std::size_t cells =
      static_cast<std::size_t>(std::ceil((2.0 * radius_m + 9.0) / 0.7)) | 1;  // odd
  d.grid = OccupancyGrid::blocked(cells, cells, 0.7);
  d.grid.carve(1, 1, static_cast<long>(cells) - 2, static_cast<long>(cells) - 2);
  const Vec2 center{d.grid.world_width() * 0.5, d.grid.world_height() * 0.5};

  const double step = 0.5;  // meters per 0.4 s frame, 1.25 m/s
  for (std::size_t i = 0; i < n_trajectories; ++i) {
    Rng rng = Rng::stream(seed, i);
    const std::size_t start = i % 6;
    const std::size_t mode = rng.uniform_int(3);
    const double theta = 2.0 * kPi * static_cast<double>(start) / 6.0;
    const Vec2 inward{-std::cos(theta), -std::sin(theta)};
    const Vec2 p0 = center + Vec2{std::cos(theta), std::sin(theta)} * radius_m;

    const double delta = (static_cast<double>(mode) - 1.0) * (kPi / 3.0);  // -60/0/+60 deg
    const Vec2 fan{inward.x * std::cos(delta) - inward.y * std::sin(delta),
                   inward.x * std::sin(delta) + inward.y * std::cos(delta)};

    TrajectoryRecord rec;
    rec.scene_id = static_cast<int>(i);
    rec.ped_id = static_cast<int>(i);
    rec.t0 = 0;
    rec.route_id = static_cast<int>(start * 3 + mode);
    const Vec2 knee = p0 + inward * (step * static_cast<double>(kObsLen - 1));
    for (std::size_t t = 0; t < kRecordLen; ++t) {
      Vec2 ideal;
      if (t < kObsLen) {
        ideal = p0 + inward * (step * static_cast<double>(t));
      } else {
        ideal = knee + fan * (step * static_cast<double>(t - (kObsLen - 1)));
      }
      ideal.x += rng.normal(0.0, jitter_sd_m);
      ideal.y += rng.normal(0.0, jitter_sd_m);
      rec.positions[t] = q6(ideal);
    }
    d.records.push_back(std::move(rec));
  }
  link_neighbors(d.records);
  d.gt = build_ground_truth(d.records);
  return d;
}

void save_dataset(const Dataset& d, const std::string& dir) {
  save_grid(d.grid, dir + "/occupancy.pgm", dir + "/occupancy.json");

  std::ofstream csv(dir + "/trajectories.csv", std::ios::binary);
  if (!csv) throw IoError("save_dataset: cannot open " + dir + "/trajectories.csv");
  csv << "scene_id,ped_id,t,x,y,split\n";
  char buf[160];
  for (const auto& rec : d.records) {
    for (std::size_t t = 0; t < kRecordLen; ++t) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.6f,%.6f,%s\n", rec.scene_id, rec.ped_id,
                    rec.t0 + static_cast<int>(t), rec.positions[t].x, rec.positions[t].y,
                    t < kObsLen ? "obs" : "fut");
      csv << buf;
    }
  }
  if (!csv) throw IoError("save_dataset: write failed");

  nlohmann::json j;
  j["position_quant_m"] = 0.5;
  j["heading_quant_deg"] = 30.0;
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& [key, members] : d.gt.groups) {
    nlohmann::json g;
    g["key"] = {key.ix, key.iy, key.heading_bucket};
    g["records"] = members;
    groups.push_back(std::move(g));
  }
  j["groups"] = std::move(groups);
  std::ofstream js(dir + "/gt_index.json", std::ios::binary);
  if (!js) throw IoError("save_dataset: cannot open " + dir + "/gt_index.json");
  js << j.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  Dataset d;
  d.grid = load_grid(dir + "/occupancy.pgm", dir + "/occupancy.json");

  std::ifstream csv(dir + "/trajectories.csv");
  if (!csv) throw IoError("load_dataset: cannot open " + dir + "/trajectories.csv");
  std::string line;
  if (!std::getline(csv, line) || line != "scene_id,ped_id,t,x,y,split") {
    throw IoError("load_dataset: bad CSV header");
  }
  TrajectoryRecord rec;
  std::size_t fill = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    int scene = 0, ped = 0, t = 0;
    double x = 0, y = 0;
    std::string split;
    std::getline(ss, field, ',');
    scene = std::stoi(field);
    std::getline(ss, field, ',');
    ped = std::stoi(field);
    std::getline(ss, field, ',');
    t = std::stoi(field);
    std::getline(ss, field, ',');
    x = std::stod(field);
    std::getline(ss, field, ',');
    y = std::stod(field);
    std::getline(ss, split, ',');
    if (fill == 0) {
      rec = TrajectoryRecord{};
      rec.scene_id = scene;
      rec.ped_id = ped;
      rec.t0 = t;
    } else if (scene != rec.scene_id || ped != rec.ped_id || t != rec.t0 + static_cast<int>(fill)) {
      throw IoError("load_dataset: rows of a record must be contiguous");
    }
    const bool expect_obs = fill < kObsLen;
    if (split != (expect_obs ? "obs" : "fut")) {
      throw IoError("load_dataset: unexpected split marker '" + split + "'");
    }
    rec.positions[fill] = {x, y};
    if (++fill == kRecordLen) {
      d.records.push_back(rec);
      fill = 0;
    }
  }
  if (fill != 0) throw IoError("load_dataset: trailing partial record");
  link_neighbors(d.records);
  d.gt = build_ground_truth(d.records);
  return d;
}

}  // namespace mgtraj::sim
