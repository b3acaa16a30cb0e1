#include "mgtraj/social_force.hpp"

#include <cmath>
#include <limits>

namespace mgtraj::sim {

namespace {

// Distance from p to the rectangle of cell (ix, iy), and the outward
// direction from the rectangle toward p.
double cell_distance(const OccupancyGrid& g, const Vec2& p, long ix, long iy, Vec2& away) {
  const double x0 = static_cast<double>(ix) * g.resolution;
  const double y0 = static_cast<double>(iy) * g.resolution;
  const double x1 = x0 + g.resolution;
  const double y1 = y0 + g.resolution;
  const double qx = std::min(std::max(p.x, x0), x1);
  const double qy = std::min(std::max(p.y, y0), y1);
  Vec2 d{p.x - qx, p.y - qy};
  const double n = d.norm();
  if (n > 0.0) {
    away = Vec2{d.x / n, d.y / n};
  } else {
    // inside the blocked cell; push toward the cell center's opposite
    Vec2 c = g.cell_center(ix, iy);
    away = (p - c).normalized();
    if (away.norm() == 0.0) away = Vec2{1.0, 0.0};
  }
  return n;
}

Vec2 obstacle_force(const OccupancyGrid& g, const Vec2& p, const SocialForceParams& prm) {
  const long cx = g.cell_of_x(p.x);
  const long cy = g.cell_of_y(p.y);
  const long radius = 3;  // ~2.1 m search window; force is negligible beyond it
  double best = std::numeric_limits<double>::infinity();
  Vec2 best_away{0.0, 0.0};
  for (long iy = cy - radius; iy <= cy + radius; ++iy) {
    for (long ix = cx - radius; ix <= cx + radius; ++ix) {
      if (g.walkable(ix, iy)) continue;  // out-of-range counts as blocked
      Vec2 away;
      const double d = cell_distance(g, p, ix, iy, away);
      if (d < best) {
        best = d;
        best_away = away;
      }
    }
  }
  if (!std::isfinite(best)) return {0.0, 0.0};
  const double mag = prm.obs_A * std::exp((prm.obs_r - best) / prm.obs_B);
  return best_away * mag;
}

// Nearest walkable cell center around p; falls back to `fallback`.
Vec2 project_walkable(const OccupancyGrid& g, const Vec2& p, const Vec2& fallback) {
  if (g.walkable_at(p)) return p;
  const long cx = g.cell_of_x(p.x);
  const long cy = g.cell_of_y(p.y);
  double best = std::numeric_limits<double>::infinity();
  Vec2 best_point = fallback;
  for (long r = 1; r <= 3; ++r) {
    for (long iy = cy - r; iy <= cy + r; ++iy) {
      for (long ix = cx - r; ix <= cx + r; ++ix) {
        if (!g.walkable(ix, iy)) continue;
        // nearest point of that cell, nudged inside
        const double x0 = static_cast<double>(ix) * g.resolution + 1e-6;
        const double y0 = static_cast<double>(iy) * g.resolution + 1e-6;
        const double x1 = x0 + g.resolution - 2e-6;
        const double y1 = y0 + g.resolution - 2e-6;
        Vec2 q{std::min(std::max(p.x, x0), x1), std::min(std::max(p.y, y0), y1)};
        const double d = (q - p).norm();
        if (d < best) {
          best = d;
          best_point = q;
        }
      }
    }
    if (std::isfinite(best)) break;
  }
  return best_point;
}

}  // namespace

void social_force_step(std::vector<Agent>& agents, const OccupancyGrid& grid,
                       const SocialForceParams& prm, double dt, SimLog& log) {
  if (!(dt > 0.0)) throw ConfigError("social_force_step: dt must be positive");
  std::vector<Vec2> accel(agents.size());
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const Agent& a = agents[i];
    if (!a.active) continue;
    Vec2 f{0.0, 0.0};
    // goal attraction
    Vec2 to_goal = (a.goal - a.position).normalized();
    Vec2 desired = to_goal * a.preferred_speed;
    f += (desired - a.velocity) * (1.0 / prm.tau);
    // pairwise repulsion
    for (std::size_t j = 0; j < agents.size(); ++j) {
      if (j == i || !agents[j].active) continue;
      Vec2 d = a.position - agents[j].position;
      const double dist = d.norm();
      Vec2 n = dist > 0.0 ? Vec2{d.x / dist, d.y / dist} : Vec2{1.0, 0.0};
      f += n * (prm.ped_A * std::exp((prm.ped_r - dist) / prm.ped_B));
    }
    // obstacle repulsion
    f += obstacle_force(grid, a.position, prm);
    accel[i] = f;
  }
  for (std::size_t i = 0; i < agents.size(); ++i) {
    Agent& a = agents[i];
    if (!a.active) continue;
    a.velocity += accel[i] * dt;
    const double vmax = prm.max_speed_factor * a.preferred_speed;
    const double speed = a.velocity.norm();
    if (speed > vmax) a.velocity = a.velocity * (vmax / speed);
    Vec2 next = a.position + a.velocity * dt;
    if (!grid.walkable_at(next)) {
      next = project_walkable(grid, next, a.position);
      a.velocity = (next - a.position) * (1.0 / dt);
      ++log.wall_projections;
    }
    a.position = next;
  }
}

}  // namespace mgtraj::sim
