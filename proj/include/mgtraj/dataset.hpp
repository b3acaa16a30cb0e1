#pragma once

#include <array>
#include <compare>
#include <map>
#include <string>
#include <vector>

#include "mgtraj/scene.hpp"
#include "mgtraj/social_force.hpp"

namespace mgtraj::sim {

inline constexpr std::size_t kObsLen = 8;
inline constexpr std::size_t kPredLen = 12;
inline constexpr std::size_t kRecordLen = kObsLen + kPredLen;
inline constexpr double kFrameDt = 0.4;

// One 20-step trajectory window: 8 observed + 12 future positions at 0.4 s.
struct TrajectoryRecord {
  int scene_id = 0;
  int ped_id = 0;
  int t0 = 0;  // global frame index of the first step
  std::array<Vec2, kRecordLen> positions{};
  // Other pedestrian ids present at each step of the window.
  std::array<std::vector<int>, kRecordLen> neighbor_ids{};
  int route_id = -1;  // simulation-side route family; -1 when unknown (loaded data)

  double mean_step_displacement() const;
};

// (X, Y) views of a record.
struct ObsFuture {
  std::array<Vec2, kObsLen> obs;
  std::array<Vec2, kPredLen> future;
};
ObsFuture split_obs_future(const TrajectoryRecord& r);

// Observation key: last observed position quantized to 0.5 m plus heading in
// 30-degree buckets.
struct ObsKey {
  long ix = 0;
  long iy = 0;
  int heading_bucket = 0;
  auto operator<=>(const ObsKey&) const = default;
};
ObsKey observation_key(const TrajectoryRecord& r);

// Conditional ground-truth support: record indices grouped by observation key.
struct GroundTruthSet {
  std::map<ObsKey, std::vector<std::size_t>> groups;
};
GroundTruthSet build_ground_truth(const std::vector<TrajectoryRecord>& records);

struct Dataset {
  OccupancyGrid grid;
  std::vector<TrajectoryRecord> records;
  GroundTruthSet gt;
  SimLog log;
};

// Social-force simulation of 1-2 concurrent agents per episode, dt = 0.1 s
// subsampled x4 to 0.4 s frames, sliced into disjoint synchronized 20-step
// windows. Deterministic for a given seed regardless of thread count.
Dataset simulate_dataset(const Scene& scene, std::size_t n_trajectories,
                         std::size_t max_agents_concurrent, std::uint64_t seed, int threads = 1);

// Toy dataset: 6 starts equidistant on a circle of the given radius, walking
// inbound for 8 steps then fanning into one of 3 directions (-60/0/+60
// degrees) for 12 steps, with i.i.d. Gaussian positional jitter.
Dataset make_circle_toy(std::uint64_t seed, std::size_t n_trajectories = 3000,
                        double radius_m = 10.0, double jitter_sd_m = 0.06);

// Directory layout: trajectories.csv, occupancy.pgm, occupancy.json,
// gt_index.json.
void save_dataset(const Dataset& d, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace mgtraj::sim
