#include "mgtraj/grid.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace mgtraj::sim {

OccupancyGrid OccupancyGrid::blocked(std::size_t w, std::size_t h, double res) {
  OccupancyGrid g;
  g.width = w;
  g.height = h;
  g.resolution = res;
  g.cells.assign(w * h, 0);
  return g;
}

void OccupancyGrid::carve(long x0, long y0, long x1, long y1) {
  x0 = std::max(x0, 1L);
  y0 = std::max(y0, 1L);
  x1 = std::min(x1, static_cast<long>(width) - 2);
  y1 = std::min(y1, static_cast<long>(height) - 2);
  for (long y = y0; y <= y1; ++y) {
    for (long x = x0; x <= x1; ++x) {
      cell(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = 1;
    }
  }
}

std::size_t OccupancyGrid::count_walkable() const {
  std::size_t n = 0;
  for (auto c : cells) n += (c != 0);
  return n;
}

void OccupancyGrid::validate() const {
  if (!(resolution > 0.0)) throw ConfigError("OccupancyGrid: resolution must be positive");
  if (cells.size() != width * height) throw ConfigError("OccupancyGrid: cell buffer size mismatch");
  if (count_walkable() == 0) throw ConfigError("OccupancyGrid: no walkable cells");
  for (std::size_t x = 0; x < width; ++x) {
    if (cell(x, 0) || cell(x, height - 1)) throw ConfigError("OccupancyGrid: border must be blocked");
  }
  for (std::size_t y = 0; y < height; ++y) {
    if (cell(0, y) || cell(width - 1, y)) throw ConfigError("OccupancyGrid: border must be blocked");
  }
}

void save_grid(const OccupancyGrid& g, const std::string& pgm_path, const std::string& json_path) {
  std::ofstream out(pgm_path, std::ios::binary);
  if (!out) throw IoError("save_grid: cannot open " + pgm_path);
  out << "P5\n" << g.width << " " << g.height << "\n255\n";
  std::vector<std::uint8_t> bytes(g.cells.size());
  for (std::size_t i = 0; i < g.cells.size(); ++i) bytes[i] = g.cells[i] ? 255 : 0;
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("save_grid: write failed for " + pgm_path);

  nlohmann::json j;
  j["resolution_m"] = g.resolution;
  std::ofstream js(json_path);
  if (!js) throw IoError("save_grid: cannot open " + json_path);
  js << j.dump(2) << "\n";
}

OccupancyGrid load_grid(const std::string& pgm_path, const std::string& json_path) {
  std::ifstream in(pgm_path, std::ios::binary);
  if (!in) throw IoError("load_grid: cannot open " + pgm_path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw IoError("load_grid: not a P5 PGM: " + pgm_path);
  std::size_t w = 0, h = 0;
  int maxval = 0;
  in >> w >> h >> maxval;
  if (maxval != 255) throw IoError("load_grid: expected maxval 255");
  in.get();  // single whitespace after header
  std::vector<std::uint8_t> bytes(w * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw IoError("load_grid: truncated PGM: " + pgm_path);

  std::ifstream js(json_path);
  if (!js) throw IoError("load_grid: cannot open " + json_path);
  nlohmann::json j = nlohmann::json::parse(js);
  OccupancyGrid g;
  g.width = w;
  g.height = h;
  g.resolution = j.at("resolution_m").get<double>();
  g.cells.resize(w * h);
  for (std::size_t i = 0; i < bytes.size(); ++i) g.cells[i] = bytes[i] >= 128 ? 1 : 0;
  g.validate();
  return g;
}

nn::Tensor crop_patch(const OccupancyGrid& g, const Vec2& pos) {
  if (!g.inside(pos)) {
    throw ConfigError("crop_patch: position outside grid");
  }
  const long half = static_cast<long>(kPatchSize) / 2;
  const long cx0 = g.cell_of_x(pos.x) - half;
  const long cy0 = g.cell_of_y(pos.y) - half;
  nn::Tensor patch({kPatchSize, kPatchSize, 1});
  for (std::size_t py = 0; py < kPatchSize; ++py) {
    for (std::size_t px = 0; px < kPatchSize; ++px) {
      const bool w = g.walkable(cx0 + static_cast<long>(px), cy0 + static_cast<long>(py));
      patch.data[py * kPatchSize + px] = w ? 1.0 : 0.0;
    }
  }
  return patch;
}

}  // namespace mgtraj::sim
