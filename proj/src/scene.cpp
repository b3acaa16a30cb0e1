#include "mgtraj/scene.hpp"

#include <cmath>

#include "mgtraj/rng.hpp"

namespace mgtraj::sim {

void Scene::validate() const {
  grid.validate();
  double total = 0.0;
  for (const auto& r : routes) {
    total += r.probability;
    for (const auto& w : r.waypoints) {
      if (!grid.walkable_at(w)) throw ConfigError("Scene: waypoint on blocked cell");
    }
    if (!grid.walkable_at(r.goal.center())) throw ConfigError("Scene: goal on blocked cell");
    if (!grid.walkable_at(r.spawn.center())) throw ConfigError("Scene: spawn on blocked cell");
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("Scene: route probabilities must sum to 1");
}

Scene build_junction_scene(JunctionKind kind, double corridor_width_m, std::uint64_t seed) {
  constexpr std::size_t kCells = 61;
  const double res = 0.7;
  const long wcells = static_cast<long>(std::lround(corridor_width_m / res));
  if (wcells < 2) throw ConfigError("build_junction_scene: corridor narrower than 2 cells");

  Scene s;
  s.grid = OccupancyGrid::blocked(kCells, kCells, res);
  const long mid = static_cast<long>(kCells) / 2;  // 30
  const long half = wcells / 2;
  const long lo = mid - half;
  const long hi = lo + wcells - 1;
  const long last = static_cast<long>(kCells) - 2;

  Rng rng(seed ^ 0x5ce5e2d1a5a5f00dULL);
  const double cx = (static_cast<double>(lo) + 0.5 * static_cast<double>(wcells)) * res;
  const double world = static_cast<double>(kCells) * res;  // 42.7 m
  const double margin = 1.0;                               // keep clear of walls
  const double halfw = static_cast<double>(wcells) * res * 0.5;
  const double lat = std::max(0.0, halfw - margin);

  auto jitter = [&] { return rng.uniform(-0.5, 0.5); };

  if (kind == JunctionKind::two_way) {
    // Single T: vertical corridor plus an east arm from the center.
    s.grid.carve(lo, 1, hi, last);
    s.grid.carve(mid, lo, last, hi);
    const Vec2 junction{cx + jitter(), cx + jitter()};
    s.junctions = {junction};
    const Box spawn{{cx - lat, 1.4}, {cx + lat, 4.2}};
    auto make_route = [&](Vec2 goal_center, double prob) {
      Route r;
      r.spawn = spawn;
      r.waypoints = {junction, goal_center};
      r.goal = Box{{goal_center.x - 1.0, goal_center.y - 1.0},
                   {goal_center.x + 1.0, goal_center.y + 1.0}};
      r.probability = prob;
      return r;
    };
    s.routes.push_back(make_route({cx + rng.uniform(-lat, lat), world - 3.0}, 0.5));  // north
    s.routes.push_back(make_route({world - 3.0, cx + rng.uniform(-lat, lat)}, 0.5));  // east
    s.validate();
    return s;
  }

  // Corridor network: one full-height vertical corridor crossed by a
  // full-width horizontal corridor (crossroads a, three exits) and by an
  // east-only arm higher up (T-junction b, two exits). Five corridor ends.
  const long r1 = 18, r2 = 42;
  const long lo1 = r1 - half, hi1 = lo1 + wcells - 1;
  const long lo2 = r2 - half, hi2 = lo2 + wcells - 1;
  s.grid.carve(lo, 1, hi, last);      // vertical, full height
  s.grid.carve(1, lo1, last, hi1);    // horizontal through a, full width
  s.grid.carve(mid, lo2, last, hi2);  // east arm at b

  const double y1 = (static_cast<double>(lo1) + 0.5 * static_cast<double>(wcells)) * res;
  const double y2 = (static_cast<double>(lo2) + 0.5 * static_cast<double>(wcells)) * res;
  const Vec2 ja{cx + jitter(), y1 + jitter()};
  const Vec2 jb{cx + jitter(), y2 + jitter()};
  s.junctions = {ja, jb};

  const double edge = 2.8;  // end-box center distance from the map border
  struct End {
    Box spawn;
    Vec2 goal;  // nominal goal center; jittered laterally per route
    bool lateral_x;  // goal jitter axis
  };
  const End S{{{cx - lat, 1.4}, {cx + lat, 4.2}}, {cx, edge}, true};
  const End N{{{cx - lat, world - 4.2}, {cx + lat, world - 1.4}}, {cx, world - edge}, true};
  const End W{{{1.4, y1 - lat}, {4.2, y1 + lat}}, {edge, y1}, false};
  const End E1{{{world - 4.2, y1 - lat}, {world - 1.4, y1 + lat}}, {world - edge, y1}, false};
  const End E2{{{world - 4.2, y2 - lat}, {world - 1.4, y2 + lat}}, {world - edge, y2}, false};

  auto add_route = [&](const End& from, std::vector<Vec2> via, const End& to, double prob) {
    Route r;
    r.spawn = from.spawn;
    Vec2 g = to.goal;
    const double j = rng.uniform(-lat, lat);
    (to.lateral_x ? g.x : g.y) += j;
    r.waypoints = std::move(via);
    r.waypoints.push_back(g);
    r.goal = Box{{g.x - 1.0, g.y - 1.0}, {g.x + 1.0, g.y + 1.0}};
    r.probability = prob;
    return s.routes.push_back(std::move(r));
  };

  // Uniform over the five entries, uniform over exits at each junction.
  const double pS = 1.0 / 5.0;
  add_route(S, {ja}, W, pS / 3.0);
  add_route(S, {ja}, E1, pS / 3.0);
  add_route(S, {ja, jb}, N, pS / 6.0);
  add_route(S, {ja, jb}, E2, pS / 6.0);

  add_route(N, {jb}, E2, pS / 2.0);
  add_route(N, {jb, ja}, W, pS / 6.0);
  add_route(N, {jb, ja}, E1, pS / 6.0);
  add_route(N, {jb, ja}, S, pS / 6.0);

  add_route(W, {ja}, E1, pS / 3.0);
  add_route(W, {ja}, S, pS / 3.0);
  add_route(W, {ja, jb}, N, pS / 6.0);
  add_route(W, {ja, jb}, E2, pS / 6.0);

  add_route(E1, {ja}, W, pS / 3.0);
  add_route(E1, {ja}, S, pS / 3.0);
  add_route(E1, {ja, jb}, N, pS / 6.0);
  add_route(E1, {ja, jb}, E2, pS / 6.0);

  add_route(E2, {jb}, N, pS / 2.0);
  add_route(E2, {jb, ja}, W, pS / 6.0);
  add_route(E2, {jb, ja}, E1, pS / 6.0);
  add_route(E2, {jb, ja}, S, pS / 6.0);

  s.validate();
  return s;
}

}  // namespace mgtraj::sim
