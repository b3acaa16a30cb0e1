#pragma once

#include <vector>

#include "mgtraj/dataset.hpp"

namespace mgtraj::metrics {

// A trajectory as a position sequence; all trajectories compared by one call
// must share the same horizon.
using Traj = std::vector<Vec2>;

// Min over the prediction set of the mean-over-timesteps L2 distance.
double ade_min_k(const std::vector<Traj>& predictions, const Traj& truth);
// Same, final timestep only.
double fde_min_k(const std::vector<Traj>& predictions, const Traj& truth);

// 1 iff at every timestep t (1-based) some member of `support` is within
// R^t = r_max * t / T of phi; 0 otherwise. Empty support scores 0.
int manifold_score(const Traj& phi, const std::vector<Traj>& support, double r_max);

// Fraction of generated trajectories inside the ground-truth manifold.
double precision(const std::vector<Traj>& generated, const std::vector<Traj>& ground_truth,
                 double r_max);
// Fraction of ground-truth trajectories inside the generated manifold.
double recall(const std::vector<Traj>& generated, const std::vector<Traj>& ground_truth,
              double r_max);
// Harmonic mean; 0 when both inputs are 0.
double f1(double precision_value, double recall_value);

struct ModeCountThresholds {
  double start_radius = 2.0;        // m, proximity of first observed positions
  double heading_tol_deg = 45.0;    // observed walking direction
  double speed_tol = 0.5;           // m/s, observed mean speed
  double collision_clearance = 0.5; // m, drop trajectories passing this close to others
  double r_max = 2.0;               // manifold radius at the final step
};

struct ModeCountReport {
  std::vector<double> per_timestep;  // disc-graph component count, length 12
  double average = 0.0;
  std::size_t n_similar = 0;         // trajectories that entered the manifold
};

// Collects records similar to the anchor (close start, similar observed
// heading and speed, no close encounters with other pedestrians), builds
// per-timestep discs of radius R^t around their future positions, and counts
// connected components of the disc-overlap graph. No similar trajectories
// yields zero modes.
ModeCountReport count_modes(const sim::Dataset& ds, const sim::TrajectoryRecord& anchor,
                            const ModeCountThresholds& th);

}  // namespace mgtraj::metrics
