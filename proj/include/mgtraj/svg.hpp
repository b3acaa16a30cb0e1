#pragma once

#include <string>
#include <vector>

#include "mgtraj/grid.hpp"
#include "mgtraj/sampling.hpp"

namespace mgtraj::plot {

// Scene map with the observed track, the true future, and the predicted fan
// colored by generator id.
void write_trajectory_fan_svg(const std::string& path, const sim::OccupancyGrid& grid,
                              const std::vector<Vec2>& observed,
                              const std::vector<Vec2>& truth,
                              const net::PredictionSet& predictions);

// Bar chart of the per-generator probabilities.
void write_pi_histogram_svg(const std::string& path, const std::vector<double>& pi);

}  // namespace mgtraj::plot
