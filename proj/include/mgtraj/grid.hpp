#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgtraj/common.hpp"
#include "mgtraj/tensor.hpp"

namespace mgtraj::sim {

// Binary walkability map. Row-major [y][x], 1 = walkable, 0 = blocked.
// World coordinates are meters with the origin at the grid's lower-left
// corner; cell (ix, iy) covers [ix*res, (ix+1)*res) x [iy*res, (iy+1)*res).
struct OccupancyGrid {
  std::size_t width = 0;
  std::size_t height = 0;
  double resolution = 0.7;
  std::vector<std::uint8_t> cells;

  static OccupancyGrid blocked(std::size_t w, std::size_t h, double res = 0.7);

  std::uint8_t& cell(std::size_t ix, std::size_t iy) { return cells[iy * width + ix]; }
  std::uint8_t cell(std::size_t ix, std::size_t iy) const { return cells[iy * width + ix]; }

  bool in_range(long ix, long iy) const {
    return ix >= 0 && iy >= 0 && ix < static_cast<long>(width) && iy < static_cast<long>(height);
  }
  bool walkable(long ix, long iy) const {
    return in_range(ix, iy) && cells[static_cast<std::size_t>(iy) * width +
                                     static_cast<std::size_t>(ix)] != 0;
  }
  long cell_of_x(double x) const { return static_cast<long>(std::floor(x / resolution)); }
  long cell_of_y(double y) const { return static_cast<long>(std::floor(y / resolution)); }
  bool walkable_at(const Vec2& p) const { return walkable(cell_of_x(p.x), cell_of_y(p.y)); }
  bool inside(const Vec2& p) const { return in_range(cell_of_x(p.x), cell_of_y(p.y)); }
  Vec2 cell_center(long ix, long iy) const {
    return {(static_cast<double>(ix) + 0.5) * resolution,
            (static_cast<double>(iy) + 0.5) * resolution};
  }
  double world_width() const { return static_cast<double>(width) * resolution; }
  double world_height() const { return static_cast<double>(height) * resolution; }

  // Carves a walkable axis-aligned cell rectangle (inclusive bounds), never
  // touching the border ring.
  void carve(long x0, long y0, long x1, long y1);

  std::size_t count_walkable() const;
  // Invariants: resolution > 0, at least one walkable cell, border blocked.
  void validate() const;
};

// PGM P5: 0 = blocked, 255 = walkable, plus sidecar JSON {"resolution_m": r}.
void save_grid(const OccupancyGrid& g, const std::string& pgm_path,
               const std::string& json_path);
OccupancyGrid load_grid(const std::string& pgm_path, const std::string& json_path);

// 32x32 patch centered on the cell containing `pos`; 1 = walkable, 0 =
// blocked; out-of-grid area is blocked fill. Shape {32, 32, 1}.
nn::Tensor crop_patch(const OccupancyGrid& g, const Vec2& pos);

inline constexpr std::size_t kPatchSize = 32;

}  // namespace mgtraj::sim
