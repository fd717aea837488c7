#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "gigaslide/raster.hpp"

namespace gigaslide {

struct Point {
  double x = 0;
  double y = 0;
  bool operator==(const Point&) const = default;
};

using Polygon = std::vector<Point>;  // closed implicitly, no repeated last vertex

inline double signed_area(const Polygon& poly) {
  double acc = 0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % n];
    acc += a.x * b.y - b.x * a.y;
  }
  return acc / 2;
}

inline double area(const Polygon& poly) { return std::abs(signed_area(poly)); }

/// Even-odd rule.
inline bool contains(const Polygon& poly, Point p) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) inside = !inside;
  }
  return inside;
}

/// Marks pixel (x, y) when its center (x+0.5, y+0.5) lies inside any polygon.
inline BinaryMask rasterize(const std::vector<Polygon>& polygons, int width, int height) {
  BinaryMask out(width, height, 0);
  std::vector<double> xs;
  for (const auto& poly : polygons) {
    if (poly.size() < 3) continue;
    for (int y = 0; y < height; ++y) {
      const double cy = y + 0.5;
      xs.clear();
      for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const auto& a = poly[i];
        const auto& b = poly[j];
        if ((a.y > cy) != (b.y > cy)) xs.push_back(a.x + (cy - a.y) * (b.x - a.x) / (b.y - a.y));
      }
      std::sort(xs.begin(), xs.end());
      for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
        const int x0 = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(xs[k + 1] - 0.5)) - 1);
        for (int x = x0; x <= x1; ++x) out.at(x, y) = 1;
      }
    }
  }
  return out;
}

namespace detail {

inline double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  if (len2 == 0) return std::hypot(p.x - a.x, p.y - a.y);
  const double t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

inline void douglas_peucker(const std::vector<Point>& pts, std::size_t first, std::size_t last, double eps,
                            std::vector<char>& keep) {
  if (last <= first + 1) return;
  double worst = -1;
  std::size_t at = first;
  for (std::size_t i = first + 1; i < last; ++i) {
    const double d = segment_distance(pts[i], pts[first], pts[last]);
    if (d > worst) {
      worst = d;
      at = i;
    }
  }
  if (worst > eps) {
    keep[at] = 1;
    douglas_peucker(pts, first, at, eps, keep);
    douglas_peucker(pts, at, last, eps, keep);
  }
}

}  // namespace detail

/// Douglas-Peucker on a closed ring: split at the vertex farthest from
/// vertex 0 and simplify both chains.
inline Polygon simplify_closed(const Polygon& ring, double epsilon) {
  const std::size_t n = ring.size();
  if (n <= 3) return ring;
  std::size_t far = 0;
  double far_d = -1;
  for (std::size_t i = 1; i < n; ++i) {
    const double d = std::hypot(ring[i].x - ring[0].x, ring[i].y - ring[0].y);
    if (d > far_d) {
      far_d = d;
      far = i;
    }
  }
  std::vector<Point> pts(ring.begin(), ring.end());
  pts.push_back(ring[0]);
  std::vector<char> keep(pts.size(), 0);
  keep[0] = keep[far] = keep[n] = 1;
  detail::douglas_peucker(pts, 0, far, epsilon, keep);
  detail::douglas_peucker(pts, far, n, epsilon, keep);
  Polygon out;
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) out.push_back(pts[i]);
  return out.size() >= 3 ? out : ring;
}

/// Splits every edge longer than `max_segment` into equal pieces.
inline Polygon densify(const Polygon& ring, double max_segment) {
  if (!(max_segment > 0)) return ring;
  Polygon out;
  for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
    const auto a = ring[i];
    const auto b = ring[(i + 1) % n];
    const int pieces = std::max(1, static_cast<int>(std::ceil(std::hypot(b.x - a.x, b.y - a.y) / max_segment)));
    for (int k = 0; k < pieces; ++k) {
      const double t = static_cast<double>(k) / pieces;
      out.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
    }
  }
  return out;
}

/// One pass of Chaikin corner cutting (1/4, 3/4 points on each edge).
inline Polygon chaikin(const Polygon& ring) {
  Polygon out;
  out.reserve(ring.size() * 2);
  for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
    const auto a = ring[i];
    const auto b = ring[(i + 1) % n];
    out.push_back({0.75 * a.x + 0.25 * b.x, 0.75 * a.y + 0.25 * b.y});
    out.push_back({0.25 * a.x + 0.75 * b.x, 0.25 * a.y + 0.75 * b.y});
  }
  return out;
}

inline bool segments_cross(Point a, Point b, Point c, Point d) {
  auto orient = [](Point p, Point q, Point r) { return (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x); };
  const double o1 = orient(a, b, c), o2 = orient(a, b, d);
  const double o3 = orient(c, d, a), o4 = orient(c, d, b);
  return ((o1 > 0 && o2 < 0) || (o1 < 0 && o2 > 0)) && ((o3 > 0 && o4 < 0) || (o3 < 0 && o4 > 0));
}

/// Brute-force check for proper crossings between non-adjacent edges.
inline bool is_simple(const Polygon& ring) {
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 2; j < n; ++j) {
      if (i == 0 && j == n - 1) continue;
      if (segments_cross(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n])) return false;
    }
  return true;
}

inline Polygon clip_to_bounds(Polygon ring, double width, double height) {
  for (auto& p : ring) {
    p.x = std::clamp(p.x, 0.0, width);
    p.y = std::clamp(p.y, 0.0, height);
  }
  return ring;
}

}  // namespace gigaslide
