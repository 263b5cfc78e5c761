#ifndef BATCHELOR_GEOMETRY_HPP
#define BATCHELOR_GEOMETRY_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "batchelor/linalg.hpp"

namespace batchelor {

/// Axis-aligned rectangle [x0, x1] x [y0, y1].
struct Rect {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  static Rect centered(double width, double height) {
    return {-0.5 * width, -0.5 * height, 0.5 * width, 0.5 * height};
  }

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  bool valid() const { return x1 > x0 && y1 > y0; }
  Rect expanded(double margin) const { return {x0 - margin, y0 - margin, x1 + margin, y1 + margin}; }
  Rect translated(Vec2 v) const { return {x0 + v.x, y0 + v.y, x1 + v.x, y1 + v.y}; }
  bool contains(Vec2 p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
  bool contains(const Rect& r) const { return r.x0 >= x0 && r.x1 <= x1 && r.y0 >= y0 && r.y1 <= y1; }
  bool operator==(const Rect&) const = default;
};

/// Minimum of v^T Q^{-1} v over v = p - center, p in rect; Q given in factored form.
/// The quadratic is convex, so the minimum is either 0 (center inside) or on an edge.
inline double min_inverse_quad_on_rect(const Covariance& q, Vec2 center, const Rect& r) {
  if (r.contains(center)) return 0.0;
  const Vec2 u = q.major_axis();
  const double ia = 1.0 / q.major();
  const double ib = 1.0 / q.minor();
  // Q^{-1} = ia u u^T + ib n n^T, n = perp(u).
  const double qxx = ia * u.x * u.x + ib * u.y * u.y;
  const double qyy = ia * u.y * u.y + ib * u.x * u.x;
  const double qxy = (ia - ib) * u.x * u.y;
  auto on_segment = [&](Vec2 a, Vec2 b) {
    // minimize f(s) = (a - c + s (b - a))^T Q^{-1} (...) over s in [0,1]
    const Vec2 d0 = a - center;
    const Vec2 e = b - a;
    const double ee = qxx * e.x * e.x + 2.0 * qxy * e.x * e.y + qyy * e.y * e.y;
    const double de = qxx * d0.x * e.x + qxy * (d0.x * e.y + d0.y * e.x) + qyy * d0.y * e.y;
    double s = ee > 0.0 ? -de / ee : 0.0;
    s = std::clamp(s, 0.0, 1.0);
    return q.inverse_quad(d0 + e * s);
  };
  const Vec2 p00{r.x0, r.y0}, p10{r.x1, r.y0}, p11{r.x1, r.y1}, p01{r.x0, r.y1};
  return std::min({on_segment(p00, p10), on_segment(p10, p11), on_segment(p11, p01),
                   on_segment(p01, p00)});
}

/// Axis-aligned half extents of the ellipse v^T Q^{-1} v <= s^2.
inline Vec2 ellipse_half_extent(const Covariance& q, double s) {
  const Sym2 m = q.matrix();
  return {s * std::sqrt(std::max(m.xx, 0.0)), s * std::sqrt(std::max(m.yy, 0.0))};
}

}  // namespace batchelor

#endif
