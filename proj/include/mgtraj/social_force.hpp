#pragma once

#include <cstdint>
#include <vector>

#include "mgtraj/grid.hpp"

namespace mgtraj::sim {

struct Agent {
  Vec2 position;
  Vec2 velocity;
  Vec2 goal;                  // current waypoint
  double preferred_speed = 1.3;
  bool active = true;
};

// Helbing-Molnar style parameters.
struct SocialForceParams {
  double tau = 0.5;        // goal-force relaxation time, s
  double ped_A = 2.0;      // pairwise repulsion strength, m/s^2
  double ped_B = 0.3;      // pairwise decay length, m
  double ped_r = 0.6;      // summed body radii, m
  double obs_A = 5.0;      // obstacle repulsion strength
  double obs_B = 0.1;      // obstacle decay length
  double obs_r = 0.3;      // body radius against walls, m
  double max_speed_factor = 2.0;
};

struct SimLog {
  std::size_t wall_projections = 0;  // steps where an agent had to be pushed back
  std::size_t discarded_agents = 0;  // goal never reached within budget
  std::size_t episodes = 0;
};

// One semi-implicit Euler step: acceleration = goal attraction + pairwise
// exponential repulsion + obstacle repulsion from the nearest blocked cell;
// speed clamped to max_speed_factor * preferred; positions that land on a
// blocked cell are projected back to the nearest walkable point and counted
// in the log.
void social_force_step(std::vector<Agent>& agents, const OccupancyGrid& grid,
                       const SocialForceParams& params, double dt, SimLog& log);

}  // namespace mgtraj::sim
