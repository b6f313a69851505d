#pragma once

// Planar primitives in px, origin top-left, y pointing down.

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "qa_core.hpp"

namespace llmmaps {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
  friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
  friend Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
  bool operator==(const Point&) const = default;
};

inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point a) { return std::hypot(a.x, a.y); }
inline double distance(Point a, Point b) { return norm(a - b); }
inline Point lerp(Point a, Point b, double t) { return {a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t}; }

struct Rect {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double right() const { return x + w; }
  double bottom() const { return y + h; }
  Point center() const { return {x + w / 2, y + h / 2}; }
  bool operator==(const Rect&) const = default;
};

// True when the open interiors intersect; touching edges do not count.
inline bool interiors_overlap(const Rect& a, const Rect& b) {
  return a.x < b.right() && b.x < a.right() && a.y < b.bottom() && b.y < a.bottom();
}

inline bool contains(const Rect& outer, const Rect& inner, double tol = 0.0) {
  return inner.x >= outer.x - tol && inner.y >= outer.y - tol && inner.right() <= outer.right() + tol &&
         inner.bottom() <= outer.bottom() + tol;
}

struct CubicSegment {
  Point p0, p1, p2, p3;

  Point at(double t) const {
    double u = 1.0 - t;
    double a = u * u * u, b = 3 * u * u * t, c = 3 * u * t * t, d = t * t * t;
    return {a * p0.x + b * p1.x + c * p2.x + d * p3.x, a * p0.y + b * p1.y + c * p2.y + d * p3.y};
  }
  bool operator==(const CubicSegment&) const = default;
};

// A straight line written as a cubic with control points at the thirds.
inline CubicSegment line_segment(Point a, Point b) {
  return {a, lerp(a, b, 1.0 / 3.0), lerp(a, b, 2.0 / 3.0), b};
}

// Closed loop of cubic segments; segment i ends where segment i+1 starts.
struct ClosedPath {
  std::vector<CubicSegment> segments;
  bool operator==(const ClosedPath&) const = default;
};

inline ClosedPath polygon_path(const std::vector<Point>& pts) {
  ClosedPath p;
  for (std::size_t i = 0; i < pts.size(); ++i) p.segments.push_back(line_segment(pts[i], pts[(i + 1) % pts.size()]));
  return p;
}

// Control distance for a quarter circle drawn as one cubic.
inline constexpr double kArcKappa = 0.5522847498307936;

/// Rounded rectangle: four edges and four quarter-arc corners, clockwise on
/// screen starting after the top-left corner.
inline ClosedPath rounded_rect_path(const Rect& r, double radius) {
  double rad = std::max(0.0, std::min({radius, r.w / 2, r.h / 2}));
  double k = kArcKappa * rad;
  double x0 = r.x, y0 = r.y, x1 = r.right(), y1 = r.bottom();
  ClosedPath p;
  auto corner = [&](Point from, Point to, Point c1, Point c2) { p.segments.push_back({from, c1, c2, to}); };
  p.segments.push_back(line_segment({x0 + rad, y0}, {x1 - rad, y0}));
  corner({x1 - rad, y0}, {x1, y0 + rad}, {x1 - rad + k, y0}, {x1, y0 + rad - k});
  p.segments.push_back(line_segment({x1, y0 + rad}, {x1, y1 - rad}));
  corner({x1, y1 - rad}, {x1 - rad, y1}, {x1, y1 - rad + k}, {x1 - rad + k, y1});
  p.segments.push_back(line_segment({x1 - rad, y1}, {x0 + rad, y1}));
  corner({x0 + rad, y1}, {x0, y1 - rad}, {x0 + rad - k, y1}, {x0, y1 - rad + k});
  p.segments.push_back(line_segment({x0, y1 - rad}, {x0, y0 + rad}));
  corner({x0, y0 + rad}, {x0 + rad, y0}, {x0, y0 + rad - k}, {x0 + rad - k, y0});
  return p;
}

// Isosceles trapezoid with horizontal edges, `top_w` wide at y and
// `bottom_w` wide at y + h, centred on cx.
inline ClosedPath trapezoid_path(double cx, double y, double h, double top_w, double bottom_w) {
  return polygon_path({{cx - top_w / 2, y}, {cx + top_w / 2, y}, {cx + bottom_w / 2, y + h}, {cx - bottom_w / 2, y + h}});
}

inline Point reflect_x(Point p, double axis) { return {2 * axis - p.x, p.y}; }

inline Rect reflect_x(const Rect& r, double axis) { return {2 * axis - r.x - r.w, r.y, r.w, r.h}; }

inline ClosedPath reflect_x(const ClosedPath& p, double axis) {
  ClosedPath out;
  for (const auto& s : p.segments)
    out.segments.push_back({reflect_x(s.p0, axis), reflect_x(s.p1, axis), reflect_x(s.p2, axis), reflect_x(s.p3, axis)});
  return out;
}

// ---------------------------------------------------------------------------
// Fixed-point number formatting for byte-stable output.
// ---------------------------------------------------------------------------

inline std::string fmt3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  std::string s(buf);
  if (s == "-0.000") s = "0.000";
  return s;
}

inline std::string svg_path_data(const ClosedPath& p) {
  if (p.segments.empty()) return "";
  std::string d = "M" + fmt3(p.segments.front().p0.x) + " " + fmt3(p.segments.front().p0.y);
  for (const auto& s : p.segments) {
    d += " C" + fmt3(s.p1.x) + " " + fmt3(s.p1.y) + " " + fmt3(s.p2.x) + " " + fmt3(s.p2.y) + " " + fmt3(s.p3.x) + " " +
         fmt3(s.p3.y);
  }
  return d + " Z";
}

inline json to_json(Point p) { return json::array({p.x, p.y}); }
inline json to_json(const Rect& r) { return {{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}}; }
inline json to_json(const ClosedPath& p) {
  json segs = json::array();
  for (const auto& s : p.segments) segs.push_back({to_json(s.p0), to_json(s.p1), to_json(s.p2), to_json(s.p3)});
  return segs;
}

}  // namespace llmmaps
