#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>
#include <string>
#include <vector>

#include "gigaslide/error.hpp"
#include "gigaslide/geometry.hpp"
#include "gigaslide/raster.hpp"
#include "gigaslide/tissue.hpp"

namespace gigaslide::heatmap {

struct PatchPrediction {
  std::string slide_name;
  int x = 0;
  int y = 0;
  double prob = 0;
};

/// Patch-center lattice plus the dense map sampled from it.
struct HeatmapGrid {
  double origin_x = 0;  // first lattice center, working pixels
  double origin_y = 0;
  double spacing = 1;   // lattice pitch (the patch stride)
  int columns = 0;
  int rows = 0;
  std::vector<double> values;  // row-major, columns x rows

  int working_width = 0;
  int working_height = 0;
  double map_scale = 0.125;
  int map_width = 0;
  int map_height = 0;
  std::vector<double> map;  // row-major, map pixel (u, v) <-> working (u / map_scale, v / map_scale)

  bool empty_input = false;

  double lattice(int col, int row) const {
    return values[static_cast<std::size_t>(row) * columns + col];
  }
  double map_at(int u, int v) const { return map[static_cast<std::size_t>(v) * map_width + u]; }

  /// Bilinear value at working coordinate (x, y); outside the lattice hull
  /// the coordinate is clamped onto it.
  double sample(double x, double y) const {
    if (columns == 0 || rows == 0) return 0.0;
    auto axis = [](double coord, double origin, double pitch, int count, int& i0, int& i1, double& t) {
      const double f = std::clamp((coord - origin) / pitch, 0.0, static_cast<double>(count - 1));
      i0 = static_cast<int>(std::floor(f));
      i1 = std::min(i0 + 1, count - 1);
      t = f - i0;
    };
    int c0, c1, r0, r1;
    double tx, ty;
    axis(x, origin_x, spacing, columns, c0, c1, tx);
    axis(y, origin_y, spacing, rows, r0, r1, ty);
    const double top = lattice(c0, r0) * (1 - tx) + lattice(c1, r0) * tx;
    const double bottom = lattice(c0, r1) * (1 - tx) + lattice(c1, r1) * tx;
    return top * (1 - ty) + bottom * ty;
  }
};

/// Builds the lattice from predictions (grid positions without one read 0)
/// and fills the dense map.
inline HeatmapGrid interpolate(const std::vector<PatchPrediction>& predictions, const pyramid::PatchGrid& grid,
                               double map_scale = 0.125) {
  if (!(map_scale > 0 && map_scale <= 1)) fail(ErrorCode::validation, "map_scale must be in (0, 1]");
  HeatmapGrid h;
  h.origin_x = h.origin_y = grid.patch_size / 2.0;
  h.spacing = grid.stride;
  h.columns = grid.columns;
  h.rows = grid.rows;
  h.values.assign(static_cast<std::size_t>(grid.columns) * grid.rows, 0.0);
  h.working_width = grid.width;
  h.working_height = grid.height;
  h.map_scale = map_scale;
  h.map_width = std::max(1, static_cast<int>(std::ceil(grid.width * map_scale - 1e-9)));
  h.map_height = std::max(1, static_cast<int>(std::ceil(grid.height * map_scale - 1e-9)));
  h.empty_input = predictions.empty();

  std::vector<std::size_t> offending;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    if (!grid.on_grid(p.x, p.y) || !(p.prob >= 0.0 && p.prob <= 1.0)) {
      offending.push_back(i);
      continue;
    }
    h.values[grid.index_of(p.x, p.y)] = p.prob;
  }
  if (!offending.empty()) {
    std::ostringstream msg;
    msg << "predictions off the patch grid or outside [0,1] at rows:";
    for (auto i : offending) msg << ' ' << i + 1;
    fail(ErrorCode::validation, msg.str());
  }

  h.map.assign(static_cast<std::size_t>(h.map_width) * h.map_height, 0.0);
  if (h.empty_input) return h;
  for (int v = 0; v < h.map_height; ++v)
    for (int u = 0; u < h.map_width; ++u)
      h.map[static_cast<std::size_t>(v) * h.map_width + u] = h.sample(u / map_scale, v / map_scale);
  return h;
}

// ---- mask filtering --------------------------------------------------------------

namespace detail {

constexpr int kCrossDx[4] = {1, -1, 0, 0};
constexpr int kCrossDy[4] = {0, 0, 1, -1};

}  // namespace detail

/// 3x3 cross structuring element. Out-of-image neighbors are ignored, so a
/// full mask stays full.
inline BinaryMask erode(const BinaryMask& m) {
  BinaryMask out(m.width, m.height, 0);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(x, y)) continue;
      bool keep = true;
      for (int k = 0; k < 4 && keep; ++k) {
        const int nx = x + detail::kCrossDx[k], ny = y + detail::kCrossDy[k];
        if (m.inside(nx, ny) && !m.at(nx, ny)) keep = false;
      }
      out.at(x, y) = keep;
    }
  return out;
}

inline BinaryMask dilate(const BinaryMask& m) {
  BinaryMask out = m;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(x, y)) continue;
      for (int k = 0; k < 4; ++k) {
        const int nx = x + detail::kCrossDx[k], ny = y + detail::kCrossDy[k];
        if (m.inside(nx, ny)) out.at(nx, ny) = 1;
      }
    }
  return out;
}

inline BinaryMask open(const BinaryMask& m) { return dilate(erode(m)); }

struct Components {
  std::vector<int> labels;  // 0 = background, 1..count
  std::vector<std::size_t> areas;  // index = label - 1
  std::vector<std::pair<int, int>> first_pixel;  // raster-order first pixel per label
  int count = 0;
};

/// 8-connected component labeling, labels assigned in raster order.
inline Components label_components(const BinaryMask& m) {
  Components cc;
  cc.labels.assign(m.bits.size(), 0);
  std::deque<std::pair<int, int>> queue;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(x, y) || cc.labels[m.index(x, y)]) continue;
      const int label = ++cc.count;
      std::size_t area = 0;
      cc.first_pixel.emplace_back(x, y);
      cc.labels[m.index(x, y)] = label;
      queue.emplace_back(x, y);
      while (!queue.empty()) {
        const auto [cx, cy] = queue.front();
        queue.pop_front();
        ++area;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = cx + dx, ny = cy + dy;
            if (!m.inside(nx, ny) || !m.at(nx, ny) || cc.labels[m.index(nx, ny)]) continue;
            cc.labels[m.index(nx, ny)] = label;
            queue.emplace_back(nx, ny);
          }
      }
      cc.areas.push_back(area);
    }
  return cc;
}

inline BinaryMask remove_small_components(const BinaryMask& m, double min_area) {
  const auto cc = label_components(m);
  BinaryMask out(m.width, m.height, 0);
  for (std::size_t i = 0; i < m.bits.size(); ++i) {
    const int label = cc.labels[i];
    if (label && static_cast<double>(cc.areas[static_cast<std::size_t>(label) - 1]) >= min_area) out.bits[i] = 1;
  }
  return out;
}

/// map >= tau, then a cross opening, then components smaller than
/// `min_area_px` (working-resolution pixels) are dropped.
inline BinaryMask threshold_and_filter(const HeatmapGrid& h, double tau = 0.5, double min_area_px = 1024) {
  if (!(tau > 0 && tau < 1)) fail(ErrorCode::validation, "tau must be in (0, 1)");
  BinaryMask raw(h.map_width, h.map_height, 0);
  for (std::size_t i = 0; i < h.map.size(); ++i) raw.bits[i] = h.map[i] >= tau;
  const double min_area_map = min_area_px * h.map_scale * h.map_scale;
  return remove_small_components(open(raw), min_area_map);
}

// ---- polygons ------------------------------------------------------------------

struct RegionPolygon {
  Polygon vertices;
  double area_px = 0;
  double scale_factor = 1;  // working -> native multiplier
};

/// Outer border of one component, walked along pixel edges with the
/// component on the right. Diagonal contacts are followed (8-connectivity).
/// Vertices are pixel corners where the walk turns.
inline Polygon trace_outer_boundary(const std::vector<int>& labels, int width, int height, int label, int start_x,
                                    int start_y) {
  auto in = [&](int x, int y) {
    return x >= 0 && y >= 0 && x < width && y < height && labels[static_cast<std::size_t>(y) * width + x] == label;
  };
  static constexpr int dx[4] = {1, 0, -1, 0};  // E S W N
  static constexpr int dy[4] = {0, 1, 0, -1};
  Polygon ring;
  int x = start_x, y = start_y, dir = 0;
  do {
    x += dx[dir];
    y += dy[dir];
    int lx, ly, rx, ry;
    switch (dir) {
      case 0: rx = x; ry = y; lx = x; ly = y - 1; break;
      case 1: rx = x - 1; ry = y; lx = x; ly = y; break;
      case 2: rx = x - 1; ry = y - 1; lx = x - 1; ly = y; break;
      default: rx = x; ry = y - 1; lx = x - 1; ly = y - 1; break;
    }
    int next;
    if (in(lx, ly)) next = (dir + 3) % 4;
    else if (in(rx, ry)) next = dir;
    else next = (dir + 1) % 4;
    if (next != dir) ring.push_back({static_cast<double>(x), static_cast<double>(y)});
    dir = next;
  } while (!(x == start_x && y == start_y && dir == 0));
  return ring;
}

struct PolygonOptions {
  double epsilon = 2.0;           // Douglas-Peucker tolerance, mask pixels
  double coordinate_scale = 1.0;  // mask pixel -> output coordinate multiplier
};

/// Traces, simplifies and smooths every component; holes are ignored.
/// Edges are split to at most 4*epsilon before corner cutting so the cut
/// never removes more than a couple of pixels at a corner.
inline std::vector<RegionPolygon> extract_polygons(const BinaryMask& mask, const PolygonOptions& opt = {}) {
  std::vector<RegionPolygon> out;
  const auto cc = label_components(mask);
  for (int label = 1; label <= cc.count; ++label) {
    const auto [sx, sy] = cc.first_pixel[static_cast<std::size_t>(label) - 1];
    auto ring = trace_outer_boundary(cc.labels, mask.width, mask.height, label, sx, sy);
    ring = simplify_closed(ring, opt.epsilon);
    ring = chaikin(densify(ring, 4 * opt.epsilon));
    for (auto& p : ring) {
      p.x *= opt.coordinate_scale;
      p.y *= opt.coordinate_scale;
    }
    if (ring.size() < 3) continue;
    RegionPolygon region;
    region.area_px = area(ring);
    region.vertices = std::move(ring);
    out.push_back(std::move(region));
  }
  return out;
}

// ---- prediction upload format ------------------------------------------------------

/// `slide,x,y,prob` header then one row per patch.
inline std::vector<PatchPrediction> parse_predictions_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<PatchPrediction> rows;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (!header_seen) {
      std::string compact;
      for (char ch : line)
        if (ch != ' ' && ch != '\t') compact.push_back(ch);
      if (compact != "slide,x,y,prob")
        fail(ErrorCode::validation, "prediction file must start with header 'slide,x,y,prob'");
      header_seen = true;
      continue;
    }
    std::istringstream fields(line);
    std::string slide, xs, ys, ps;
    if (!std::getline(fields, slide, ',') || !std::getline(fields, xs, ',') || !std::getline(fields, ys, ',') ||
        !std::getline(fields, ps))
      fail(ErrorCode::validation, "malformed prediction row at line " + std::to_string(line_no));
    try {
      PatchPrediction p;
      p.slide_name = slide;
      p.x = std::stoi(xs);
      p.y = std::stoi(ys);
      p.prob = std::stod(ps);
      rows.push_back(std::move(p));
    } catch (const std::exception&) {
      fail(ErrorCode::validation, "non-numeric prediction field at line " + std::to_string(line_no));
    }
  }
  if (!header_seen) fail(ErrorCode::validation, "prediction file is empty (missing header)");
  return rows;
}

inline std::string format_predictions_csv(const std::vector<PatchPrediction>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "slide,x,y,prob\n";
  for (const auto& p : rows) out << p.slide_name << ',' << p.x << ',' << p.y << ',' << p.prob << '\n';
  return out.str();
}

}  // namespace gigaslide::heatmap
