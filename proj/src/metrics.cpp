#include "mgtraj/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mgtraj/model.hpp"

namespace mgtraj::metrics {

namespace {
constexpr double kPi = 3.141592653589793238462643383279502884;

void check_horizons(const std::vector<Traj>& set, std::size_t horizon, const char* what) {
  for (const Traj& t : set) {
    if (t.size() != horizon) {
      throw DimensionError(std::string(what) + ": trajectory horizons differ");
    }
  }
}
}  // namespace

double ade_min_k(const std::vector<Traj>& predictions, const Traj& truth) {
  if (predictions.empty()) throw ConfigError("ade_min_k: empty prediction set");
  if (truth.empty()) throw ConfigError("ade_min_k: empty ground truth");
  check_horizons(predictions, truth.size(), "ade_min_k");
  double best = std::numeric_limits<double>::infinity();
  for (const Traj& p : predictions) {
    double acc = 0.0;
    for (std::size_t t = 0; t < truth.size(); ++t) {
      acc += std::hypot(p[t].x - truth[t].x, p[t].y - truth[t].y);
    }
    best = std::min(best, acc / static_cast<double>(truth.size()));
  }
  return best;
}

double fde_min_k(const std::vector<Traj>& predictions, const Traj& truth) {
  if (predictions.empty()) throw ConfigError("fde_min_k: empty prediction set");
  if (truth.empty()) throw ConfigError("fde_min_k: empty ground truth");
  check_horizons(predictions, truth.size(), "fde_min_k");
  const Vec2 goal = truth.back();
  double best = std::numeric_limits<double>::infinity();
  for (const Traj& p : predictions) {
    best = std::min(best, std::hypot(p.back().x - goal.x, p.back().y - goal.y));
  }
  return best;
}

int manifold_score(const Traj& phi, const std::vector<Traj>& support, double r_max) {
  if (phi.empty()) throw ConfigError("manifold_score: empty trajectory");
  if (r_max <= 0.0) throw ConfigError("manifold_score: r_max must be > 0");
  if (support.empty()) return 0;
  check_horizons(support, phi.size(), "manifold_score");
  const double horizon = static_cast<double>(phi.size());
  for (std::size_t ti = 0; ti < phi.size(); ++ti) {
    const double radius = r_max * static_cast<double>(ti + 1) / horizon;
    bool covered = false;
    for (const Traj& other : support) {
      if (std::hypot(phi[ti].x - other[ti].x, phi[ti].y - other[ti].y) <= radius) {
        covered = true;
        break;
      }
    }
    if (!covered) return 0;
  }
  return 1;
}

double precision(const std::vector<Traj>& generated, const std::vector<Traj>& ground_truth,
                 double r_max) {
  if (generated.empty()) throw ConfigError("precision: empty generated set");
  std::size_t hits = 0;
  for (const Traj& g : generated) hits += static_cast<std::size_t>(manifold_score(g, ground_truth, r_max));
  return static_cast<double>(hits) / static_cast<double>(generated.size());
}

double recall(const std::vector<Traj>& generated, const std::vector<Traj>& ground_truth,
              double r_max) {
  if (ground_truth.empty()) throw ConfigError("recall: empty ground truth set");
  std::size_t hits = 0;
  for (const Traj& t : ground_truth) hits += static_cast<std::size_t>(manifold_score(t, generated, r_max));
  return static_cast<double>(hits) / static_cast<double>(ground_truth.size());
}

double f1(double precision_value, double recall_value) {
  if (precision_value < 0.0 || precision_value > 1.0 || recall_value < 0.0 ||
      recall_value > 1.0) {
    throw ConfigError("f1: inputs must lie in [0, 1]");
  }
  const double sum = precision_value + recall_value;
  if (sum <= 0.0) return 0.0;
  return 2.0 * precision_value * recall_value / sum;
}

namespace {

double observed_heading(const sim::TrajectoryRecord& r) {
  const Vec2 d = r.positions[sim::kObsLen - 1] - r.positions[0];
  return std::atan2(d.y, d.x);
}

double observed_speed(const sim::TrajectoryRecord& r) {
  double acc = 0.0;
  for (std::size_t t = 1; t < sim::kObsLen; ++t) {
    acc += (r.positions[t] - r.positions[t - 1]).norm();
  }
  return acc / (static_cast<double>(sim::kObsLen - 1) * sim::kFrameDt);
}

double angle_diff(double a, double b) {
  double d = a - b;
  while (d > kPi) d -= 2.0 * kPi;
  while (d < -kPi) d += 2.0 * kPi;
  return std::abs(d);
}

// True when the record ever comes within `clearance` of one of its neighbors.
bool passes_near_other(const sim::Dataset& ds, const net::RecordIndex& index,
                       const sim::TrajectoryRecord& r, double clearance) {
  for (std::size_t t = 0; t < sim::kRecordLen; ++t) {
    for (int nb_id : r.neighbor_ids[t]) {
      auto it = index.find({r.scene_id, nb_id, r.t0});
      if (it == index.end()) continue;
      const auto& other = ds.records[it->second];
      if ((r.positions[t] - other.positions[t]).norm() <= clearance) return true;
    }
  }
  return false;
}

std::size_t count_components(const std::vector<Vec2>& centers, double radius) {
  const std::size_t n = centers.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if ((centers[i] - centers[j]).norm() <= 2.0 * radius) {
        parent[find(i)] = find(j);
      }
    }
  }
  std::size_t components = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (find(i) == i) ++components;
  }
  return components;
}

}  // namespace

ModeCountReport count_modes(const sim::Dataset& ds, const sim::TrajectoryRecord& anchor,
                            const ModeCountThresholds& th) {
  if (ds.records.empty()) throw ConfigError("count_modes: empty dataset");
  const net::RecordIndex index = net::build_record_index(ds);
  const double anchor_heading = observed_heading(anchor);
  const double anchor_speed = observed_speed(anchor);
  const double heading_tol = th.heading_tol_deg * kPi / 180.0;

  std::vector<const sim::TrajectoryRecord*> similar;
  for (const auto& r : ds.records) {
    if ((r.positions[0] - anchor.positions[0]).norm() > th.start_radius) continue;
    if (angle_diff(observed_heading(r), anchor_heading) > heading_tol) continue;
    if (std::abs(observed_speed(r) - anchor_speed) > th.speed_tol) continue;
    if (passes_near_other(ds, index, r, th.collision_clearance)) continue;
    similar.push_back(&r);
  }

  ModeCountReport report;
  report.n_similar = similar.size();
  report.per_timestep.assign(sim::kPredLen, 0.0);
  if (similar.empty()) return report;  // zero modes

  for (std::size_t ti = 0; ti < sim::kPredLen; ++ti) {
    const double radius =
        th.r_max * static_cast<double>(ti + 1) / static_cast<double>(sim::kPredLen);
    std::vector<Vec2> centers;
    centers.reserve(similar.size());
    for (const auto* r : similar) centers.push_back(r->positions[sim::kObsLen + ti]);
    report.per_timestep[ti] = static_cast<double>(count_components(centers, radius));
  }
  report.average = std::accumulate(report.per_timestep.begin(), report.per_timestep.end(), 0.0) /
                   static_cast<double>(sim::kPredLen);
  return report;
}

}  // namespace mgtraj::metrics
