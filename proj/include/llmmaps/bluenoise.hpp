#pragma once

// Even point fills of closed Bezier regions.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "random.hpp"

namespace llmmaps {

inline constexpr double kDefaultFlatness = 0.25;

namespace detail {

// Largest distance of the inner control points from the chord.
inline double flatness(const CubicSegment& s) {
  Point d = s.p3 - s.p0;
  double len = norm(d);
  if (len == 0.0) return std::max(distance(s.p1, s.p0), distance(s.p2, s.p0));
  return std::max(std::abs(cross(d, s.p1 - s.p0)), std::abs(cross(d, s.p2 - s.p0))) / len;
}

inline void flatten_into(const CubicSegment& s, double tol, int depth, std::vector<Point>& out) {
  // Control points within tol of the chord bound the curve within 3/4 tol.
  if (depth >= 20 || flatness(s) <= tol) {
    out.push_back(s.p3);
    return;
  }
  Point p01 = lerp(s.p0, s.p1, 0.5), p12 = lerp(s.p1, s.p2, 0.5), p23 = lerp(s.p2, s.p3, 0.5);
  Point a = lerp(p01, p12, 0.5), b = lerp(p12, p23, 0.5);
  Point m = lerp(a, b, 0.5);
  flatten_into({s.p0, p01, a, m}, tol, depth + 1, out);
  flatten_into({m, b, p23, s.p3}, tol, depth + 1, out);
}

inline bool segments_cross(Point a, Point b, Point c, Point d) {
  auto orient = [](Point p, Point q, Point r) {
    double v = cross(q - p, r - p);
    return (v > 0) - (v < 0);
  };
  auto on = [](Point p, Point q, Point r) {  // r on segment pq, given collinear
    return std::min(p.x, q.x) <= r.x && r.x <= std::max(p.x, q.x) && std::min(p.y, q.y) <= r.y &&
           r.y <= std::max(p.y, q.y);
  };
  int o1 = orient(a, b, c), o2 = orient(a, b, d), o3 = orient(c, d, a), o4 = orient(c, d, b);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on(a, b, c)) return true;
  if (o2 == 0 && on(a, b, d)) return true;
  if (o3 == 0 && on(c, d, a)) return true;
  if (o4 == 0 && on(c, d, b)) return true;
  return false;
}

}  // namespace detail

struct BoundaryHit {
  Point point;
  std::size_t edge = 0;
  double dist = 0.0;
};

/// A closed path together with its flattened polyline. Construction checks
/// closure and simplicity.
class Region {
 public:
  explicit Region(ClosedPath path, double flat_tol = kDefaultFlatness) : path_(std::move(path)), tol_(flat_tol) {
    if (path_.segments.empty()) throw DegenerateRegionError("region has no segments");
    if (!(tol_ > 0)) throw DegenerateRegionError("flattening tolerance must be positive");
    const auto& segs = path_.segments;
    for (std::size_t i = 0; i < segs.size(); ++i) {
      const auto& next = segs[(i + 1) % segs.size()];
      if (distance(segs[i].p3, next.p0) > 1e-9) throw DegenerateRegionError("path is not closed");
    }
    poly_.push_back(segs.front().p0);
    for (const auto& s : segs) detail::flatten_into(s, tol_, 0, poly_);
    poly_.pop_back();  // last point repeats the first
    // Drop zero-length edges.
    std::vector<Point> clean;
    for (const auto& p : poly_)
      if (clean.empty() || distance(clean.back(), p) > 0) clean.push_back(p);
    while (clean.size() > 1 && distance(clean.back(), clean.front()) == 0) clean.pop_back();
    poly_ = std::move(clean);
    if (poly_.size() < 3) throw DegenerateRegionError("region collapses to fewer than three vertices");

    double a2 = 0.0;
    for (std::size_t i = 0; i < poly_.size(); ++i) a2 += cross(poly_[i], poly_[(i + 1) % poly_.size()]);
    signed_area_ = a2 / 2;
    if (std::abs(signed_area_) <= 0.0) throw DegenerateRegionError("region has zero area");
    check_simple();

    lo_ = hi_ = poly_.front();
    for (const auto& p : poly_) {
      lo_ = {std::min(lo_.x, p.x), std::min(lo_.y, p.y)};
      hi_ = {std::max(hi_.x, p.x), std::max(hi_.y, p.y)};
    }
  }

  const ClosedPath& path() const { return path_; }
  const std::vector<Point>& polyline() const { return poly_; }
  double tolerance() const { return tol_; }
  double area() const { return std::abs(signed_area_); }
  Point bbox_min() const { return lo_; }
  Point bbox_max() const { return hi_; }

  int winding_number(Point p) const {
    int wn = 0;
    for (std::size_t i = 0; i < poly_.size(); ++i) {
      Point a = poly_[i], b = poly_[(i + 1) % poly_.size()];
      if (a.y <= p.y) {
        if (b.y > p.y && cross(b - a, p - a) > 0) ++wn;
      } else if (b.y <= p.y && cross(b - a, p - a) < 0) {
        --wn;
      }
    }
    return wn;
  }

  BoundaryHit nearest_boundary(Point p) const {
    BoundaryHit best{poly_.front(), 0, std::numeric_limits<double>::infinity()};
    for (std::size_t i = 0; i < poly_.size(); ++i) {
      Point a = poly_[i], b = poly_[(i + 1) % poly_.size()];
      Point ab = b - a;
      double t = std::clamp(dot(p - a, ab) / dot(ab, ab), 0.0, 1.0);
      Point q = a + t * ab;
      double d = distance(p, q);
      if (d < best.dist) best = {q, i, d};
    }
    return best;
  }

  /// Unit normal of polyline edge i pointing into the region.
  Point inward_normal(std::size_t edge) const {
    Point a = poly_[edge], b = poly_[(edge + 1) % poly_.size()];
    Point d = b - a;
    double len = norm(d);
    Point left{-d.y / len, d.x / len};
    return signed_area_ > 0 ? left : Point{-left.x, -left.y};
  }

  /// Inside by winding number and farther than `margin` (at least the
  /// flattening tolerance) from the boundary.
  bool inside(Point p, double margin = 0.0) const {
    if (winding_number(p) == 0) return false;
    return nearest_boundary(p).dist > std::max(margin, tol_);
  }

 private:
  void check_simple() const {
    std::size_t n = poly_.size();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (j == i + 1 || (i == 0 && j == n - 1)) continue;  // neighbours share a vertex
        if (detail::segments_cross(poly_[i], poly_[(i + 1) % n], poly_[j], poly_[(j + 1) % n]))
          throw DegenerateRegionError("path intersects itself");
      }
    }
  }

  ClosedPath path_;
  double tol_;
  std::vector<Point> poly_;
  double signed_area_ = 0.0;
  Point lo_, hi_;
};

/// Boundary points (within the flattening tolerance) count as outside.
inline bool point_in_path(const Region& region, Point p) { return region.inside(p); }

/// Moves p to the nearest boundary point plus `margin` along the inward
/// normal, repeating when that lands too close to another edge.
inline Point project_to_interior(const Region& region, Point p, double margin) {
  if (region.inside(p, margin)) return p;
  // A hair more than the margin so the strict check holds after rounding.
  double push = std::max(margin, region.tolerance()) * (1.0 + 1e-6);
  Point cur = p;
  for (int iter = 0; iter < 8; ++iter) {
    auto hit = region.nearest_boundary(cur);
    Point n = region.inward_normal(hit.edge);
    // Already inside but too close: push away from the boundary from where we are.
    bool in = region.winding_number(cur) != 0;
    if (in && hit.dist > 0) {
      Point away = (1.0 / hit.dist) * (cur - hit.point);
      n = away;
    }
    cur = hit.point + push * n;
    if (region.inside(cur, margin)) return cur;
  }
  throw DegenerateRegionError("region is thinner than twice the margin near (" + fmt3(p.x) + ", " + fmt3(p.y) + ")");
}

struct BlueNoiseParams {
  double dot_radius = 2.0;  // also the clearance from the boundary
  int relax_iters = 50;
  double packing = 0.8 / std::sqrt(std::numbers::pi);
  double step = 0.5;
  std::size_t init_attempts_per_point = 20000;
};

struct SampleSet {
  std::vector<Point> points;
  std::uint64_t seed = 0;
  double target_radius = 0.0;
  double dot_radius = 0.0;
};

inline double target_radius(const Region& region, std::size_t n, const BlueNoiseParams& params) {
  if (n == 0) return 0.0;
  return params.packing * std::sqrt(region.area() / static_cast<double>(n));
}

// Dots fit when the spacing target leaves room for two dot radii.
inline bool fits(const Region& region, std::size_t n, const BlueNoiseParams& params) {
  return n == 0 || target_radius(region, n, params) >= 2.0 * params.dot_radius;
}

/// Seeded rejection-sampled start followed by pairwise repulsion, each step
/// projected back into the region with the dot radius as margin.
inline SampleSet sample_blue_noise(const Region& region, std::size_t n, std::uint64_t seed,
                                   const BlueNoiseParams& params = {}) {
  SampleSet out;
  out.seed = seed;
  out.dot_radius = params.dot_radius;
  if (n == 0) return out;
  if (!fits(region, n, params))
    throw CapacityError(std::to_string(n) + " dots of radius " + fmt3(params.dot_radius) + " do not fit the region");
  double r = target_radius(region, n, params);
  out.target_radius = r;
  double margin = params.dot_radius;

  Rng rng(seed);
  Point lo = region.bbox_min(), hi = region.bbox_max();
  auto& pts = out.points;
  pts.reserve(n);
  std::size_t attempts = 0, max_attempts = params.init_attempts_per_point * n;
  while (pts.size() < n) {
    if (++attempts > max_attempts) throw DegenerateRegionError("no interior room at the requested margin");
    Point p{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y)};
    if (region.inside(p, margin)) pts.push_back(p);
  }

  double reach = 2.0 * r;
  double cell = reach;
  auto nx = static_cast<std::size_t>(std::floor((hi.x - lo.x) / cell)) + 1;
  auto ny = static_cast<std::size_t>(std::floor((hi.y - lo.y) / cell)) + 1;
  std::vector<std::vector<std::size_t>> grid(nx * ny);
  auto cell_of = [&](Point p) {
    auto cx = static_cast<std::size_t>(std::clamp(std::floor((p.x - lo.x) / cell), 0.0, static_cast<double>(nx - 1)));
    auto cy = static_cast<std::size_t>(std::clamp(std::floor((p.y - lo.y) / cell), 0.0, static_cast<double>(ny - 1)));
    return std::pair{cx, cy};
  };

  std::vector<Point> shift(n);
  for (int iter = 0; iter < params.relax_iters && n > 1; ++iter) {
    for (auto& c : grid) c.clear();
    for (std::size_t i = 0; i < n; ++i) {
      auto [cx, cy] = cell_of(pts[i]);
      grid[cy * nx + cx].push_back(i);
    }
    for (std::size_t i = 0; i < n; ++i) {
      Point f{0, 0};
      auto [cx, cy] = cell_of(pts[i]);
      for (std::size_t gy = cy ? cy - 1 : 0; gy <= std::min(cy + 1, ny - 1); ++gy) {
        for (std::size_t gx = cx ? cx - 1 : 0; gx <= std::min(cx + 1, nx - 1); ++gx) {
          for (std::size_t j : grid[gy * nx + gx]) {
            if (j == i) continue;
            Point d = pts[i] - pts[j];
            double len = norm(d);
            if (len >= reach) continue;
            Point dir;
            if (len > 0) {
              dir = (1.0 / len) * d;
            } else {  // coincident points split along an index-dependent direction
              double a = static_cast<double>(std::min(i, j) * 2654435761u % 360u) * std::numbers::pi / 180.0;
              dir = i < j ? Point{std::cos(a), std::sin(a)} : Point{-std::cos(a), -std::sin(a)};
            }
            f = f + (reach - len) * dir;
          }
        }
      }
      shift[i] = params.step * 0.5 * f;
    }
    for (std::size_t i = 0; i < n; ++i) {
      pts[i] = project_to_interior(region, pts[i] + shift[i], margin);
      assert(region.inside(pts[i], margin));
    }
  }
  return out;
}

inline constexpr double kDotShrink = 0.8;
inline constexpr double kMinDotRadius = 0.5;

/// Samples at the requested dot radius, shrinking it geometrically while the
/// dots do not fit. Throws CapacityError once the radius would fall below
/// the floor.
inline SampleSet sample_with_shrink(const Region& region, std::size_t n, std::uint64_t seed, BlueNoiseParams params) {
  while (true) {
    if (params.dot_radius < kMinDotRadius)
      throw CapacityError(std::to_string(n) + " dots do not fit even at the minimum dot radius");
    try {
      return sample_blue_noise(region, n, seed, params);
    } catch (const CapacityError&) {
    } catch (const DegenerateRegionError&) {
    }
    params.dot_radius *= kDotShrink;
  }
}

inline json to_json(const SampleSet& s) {
  json pts = json::array();
  for (const auto& p : s.points) pts.push_back(to_json(p));
  return {{"seed", s.seed}, {"target_radius", s.target_radius}, {"dot_radius", s.dot_radius}, {"points", pts}};
}

}  // namespace llmmaps
