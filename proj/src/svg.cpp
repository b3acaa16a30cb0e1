#include "mgtraj/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace mgtraj::plot {

namespace {

const char* kPalette[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

struct WorldToPixel {
  double scale;
  double height_px;
  std::string x(double wx) const { return fmt(wx * scale); }
  std::string y(double wy) const { return fmt(height_px - wy * scale); }
};

void polyline(std::ofstream& out, const WorldToPixel& w2p, const std::vector<Vec2>& pts,
              const char* color, double width, const char* dash = nullptr) {
  if (pts.empty()) return;
  out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << width << "\"";
  if (dash) out << " stroke-dasharray=\"" << dash << "\"";
  out << " points=\"";
  for (const Vec2& p : pts) out << w2p.x(p.x) << "," << w2p.y(p.y) << " ";
  out << "\"/>\n";
}

}  // namespace

void write_trajectory_fan_svg(const std::string& path, const sim::OccupancyGrid& grid,
                              const std::vector<Vec2>& observed,
                              const std::vector<Vec2>& truth,
                              const net::PredictionSet& predictions) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write plot " + path);

  const double world_w = grid.world_width();
  const double world_h = grid.world_height();
  const double scale = 600.0 / std::max(world_w, world_h);
  const WorldToPixel w2p{scale, world_h * scale};

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(world_w * scale)
      << "\" height=\"" << fmt(world_h * scale) << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  const double cell_px = grid.resolution * scale;
  for (std::size_t cy = 0; cy < grid.height; ++cy) {
    for (std::size_t cx = 0; cx < grid.width; ++cx) {
      if (grid.walkable(static_cast<long>(cx), static_cast<long>(cy))) continue;
      const double wx = static_cast<double>(cx) * grid.resolution;
      const double wy = static_cast<double>(cy + 1) * grid.resolution;  // top edge of cell
      out << "<rect x=\"" << w2p.x(wx) << "\" y=\"" << w2p.y(wy) << "\" width=\""
          << fmt(cell_px) << "\" height=\"" << fmt(cell_px) << "\" fill=\"#555555\"/>\n";
    }
  }

  for (const auto& p : predictions.trajectories) {
    std::vector<Vec2> pts;
    if (!observed.empty()) pts.push_back(observed.back());
    pts.insert(pts.end(), p.positions.begin(), p.positions.end());
    const char* color =
        kPalette[static_cast<std::size_t>(std::max(p.generator_id, 0)) % std::size(kPalette)];
    polyline(out, w2p, pts, color, 1.0);
  }
  polyline(out, w2p, observed, "#000000", 2.0);
  polyline(out, w2p, truth, "#008800", 2.0, "4,3");
  out << "</svg>\n";
}

void write_pi_histogram_svg(const std::string& path, const std::vector<double>& pi) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write plot " + path);
  const double bar_w = 60.0, gap = 20.0, chart_h = 220.0, base_y = 250.0;
  const double width = gap + static_cast<double>(pi.size()) * (bar_w + gap);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width)
      << "\" height=\"300\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  for (std::size_t g = 0; g < pi.size(); ++g) {
    const double h = std::clamp(pi[g], 0.0, 1.0) * chart_h;
    const double x = gap + static_cast<double>(g) * (bar_w + gap);
    out << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(base_y - h) << "\" width=\"" << fmt(bar_w)
        << "\" height=\"" << fmt(h) << "\" fill=\"" << kPalette[g % std::size(kPalette)]
        << "\"/>\n";
    out << "<text x=\"" << fmt(x + bar_w / 2) << "\" y=\"270\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"14\">g"
        << g << "</text>\n";
    out << "<text x=\"" << fmt(x + bar_w / 2) << "\" y=\"" << fmt(base_y - h - 6)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << fmt(pi[g])
        << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace mgtraj::plot
