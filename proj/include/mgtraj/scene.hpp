#pragma once

#include <vector>

#include "mgtraj/grid.hpp"

namespace mgtraj::sim {

enum class JunctionKind { two_way, three_way };

struct Box {
  Vec2 lo;
  Vec2 hi;
  bool contains(const Vec2& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
  }
  Vec2 center() const { return {(lo.x + hi.x) * 0.5, (lo.y + hi.y) * 0.5}; }
};

struct Route {
  Box spawn;                   // spawn region
  std::vector<Vec2> waypoints; // junction waypoints along the way, then goal point
  Box goal;                    // terminal region
  double probability = 0.0;
};

struct Scene {
  OccupancyGrid grid;
  std::vector<Route> routes;
  std::vector<Vec2> junctions;  // branch points; routes through the same one share it

  void validate() const;  // probabilities sum to 1, waypoints walkable
};

// Parametric junction scenes. two_way is a single T-junction approached from
// the south (straight or east turn). three_way is a corridor network with two
// branch points of different arity -- a crossroads offering three exits and a
// T-junction offering two -- entered from any of the five corridor ends, so
// the set of feasible continuations depends on where the agent is and which
// way it travels. Routes take every (entry, choice sequence) combination with
// uniform choices at each branch point. The seed jitters junction waypoints
// and per-route goal points within walkable margins; corridor geometry itself
// is deterministic.
Scene build_junction_scene(JunctionKind kind, double corridor_width_m = 4.9,
                           std::uint64_t seed = 0);

}  // namespace mgtraj::sim
