#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "onramp/common.hpp"

namespace onramp {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

inline Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
inline Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
inline Point2 operator*(double k, Point2 a) { return {k * a.x, k * a.y}; }
inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point2 a) { return std::hypot(a.x, a.y); }

/// Closest-point projection of a planar point onto a polyline.
struct LaneCoord {
  double s = 0.0;  ///< arc length of the foot point
  double e = 0.0;  ///< signed offset, positive to the left of the travel direction
  std::size_t segment = 0;
  Point2 foot;
  Point2 tangent;  ///< unit direction of `segment`
};

/// Piecewise-linear curve with cached arc length. Zero-length segments are
/// tolerated but never selected by a projection.
class Polyline {
 public:
  Polyline() = default;

  explicit Polyline(std::vector<Point2> vertices) : vertices_(std::move(vertices)) {
    if (vertices_.size() < 2) throw GeometryError("polyline needs at least 2 vertices");
    cumulative_.assign(vertices_.size(), 0.0);
    for (std::size_t i = 1; i < vertices_.size(); ++i)
      cumulative_[i] = cumulative_[i - 1] + norm(vertices_[i] - vertices_[i - 1]);
    if (!(cumulative_.back() > 0.0)) throw GeometryError("polyline has zero length");
  }

  const std::vector<Point2>& vertices() const { return vertices_; }
  double length() const { return cumulative_.back(); }
  std::size_t segment_count() const { return vertices_.size() - 1; }
  double segment_start_s(std::size_t k) const { return cumulative_[k]; }

  Point2 segment_tangent(std::size_t k) const {
    const Point2 d = vertices_[k + 1] - vertices_[k];
    const double len = norm(d);
    return len > 0.0 ? (1.0 / len) * d : Point2{1.0, 0.0};
  }

  // Segment containing arc length s (clamped), skipping zero-length segments.
  std::size_t segment_at(double s) const {
    s = std::clamp(s, 0.0, length());
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
    std::size_t k = it == cumulative_.begin() ? 0 : static_cast<std::size_t>(it - cumulative_.begin()) - 1;
    k = std::min(k, segment_count() - 1);
    while (k + 1 < segment_count() && cumulative_[k + 1] - cumulative_[k] <= 0.0) ++k;
    while (k > 0 && cumulative_[k + 1] - cumulative_[k] <= 0.0) --k;
    return k;
  }

  /// World point at lane coordinates (s, e) using the normal of the segment at s.
  Point2 point_at(double s, double e = 0.0) const {
    const std::size_t k = segment_at(s);
    const Point2 t = segment_tangent(k);
    const Point2 n{-t.y, t.x};
    const Point2 base = vertices_[k] + (std::clamp(s, 0.0, length()) - cumulative_[k]) * t;
    return base + e * n;
  }

  /// Projections past either end clamp s and report the perpendicular offset
  /// to the end segment's line; elsewhere |e| is the distance to the foot.
  LaneCoord project(Point2 p) const {
    LaneCoord best;
    double best_d2 = std::numeric_limits<double>::infinity();
    double best_u = 0.0;
    for (std::size_t k = 0; k + 1 < vertices_.size(); ++k) {
      const Point2 a = vertices_[k];
      const Point2 d = vertices_[k + 1] - a;
      const double len2 = dot(d, d);
      if (len2 <= 0.0) continue;
      const double u = dot(p - a, d) / len2;
      const double uc = std::clamp(u, 0.0, 1.0);
      const Point2 foot = a + uc * d;
      const Point2 r = p - foot;
      const double d2 = dot(r, r);
      if (d2 < best_d2) {
        best_d2 = d2;
        best_u = u;
        best.segment = k;
        best.foot = foot;
        best.s = cumulative_[k] + uc * std::sqrt(len2);
      }
    }
    best.tangent = segment_tangent(best.segment);
    const Point2 r = p - best.foot;
    const double side = cross(best.tangent, r);
    const bool before_start = best.segment == 0 && best_u < 0.0;
    const bool past_end = best.segment + 1 == segment_count() && best_u > 1.0;
    if (before_start || past_end) {
      best.e = side;
    } else {
      best.e = side < 0.0 ? -std::sqrt(best_d2) : std::sqrt(best_d2);
    }
    return best;
  }

 private:
  std::vector<Point2> vertices_;
  std::vector<double> cumulative_;
};

/// A polyline with an orientation sign chosen so that positive offsets point
/// toward the target lane.
struct LaneLine {
  Polyline line;
  double side = 1.0;  ///< +1 when "left" is toward the target lane, else -1

  LaneCoord project(Point2 p) const {
    LaneCoord c = line.project(p);
    c.e *= side;
    return c;
  }
};

/// (s, e) of `position` on an oriented lane line.
inline LaneCoord project_to_lane(Point2 position, const LaneLine& lane) { return lane.project(position); }

struct LaneVelocity {
  double lateral = 0.0;       ///< v_x, positive toward the target lane
  double longitudinal = 0.0;  ///< v_y, along the lane direction
};

/// Velocity rotated into the tangent/normal frame at the projected point.
inline LaneVelocity signed_lane_velocity(Point2 position, Point2 velocity, const LaneLine& lane) {
  const LaneCoord c = lane.project(position);
  const Point2 n{-c.tangent.y, c.tangent.x};
  return {lane.side * dot(velocity, n), dot(velocity, c.tangent)};
}

}  // namespace onramp
