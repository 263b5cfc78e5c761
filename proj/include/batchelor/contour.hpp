#ifndef BATCHELOR_CONTOUR_HPP
#define BATCHELOR_CONTOUR_HPP

// Level sets of a rendered field by oriented marching squares, and the
// per-contour geometry used by the statistics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "batchelor/linalg.hpp"
#include "batchelor/parallel.hpp"
#include "batchelor/scalar.hpp"

namespace batchelor {

struct Contour {
  std::vector<Vec2> vertices;
  bool closed = false;
  double level = 0.0;
  bool touches_boundary = false;
};

namespace detail {

// Edge ids: horizontal edge (i,j)-(i+1,j) is j*(nx-1)+i, vertical edge
// (i,j)-(i,j+1) is n_horizontal + j*nx + i.
struct EdgeIndex {
  std::size_t nx, ny;
  std::size_t n_h() const { return (nx - 1) * ny; }
  std::size_t total() const { return n_h() + nx * (ny - 1); }
  std::size_t h(std::size_t i, std::size_t j) const { return j * (nx - 1) + i; }
  std::size_t v(std::size_t i, std::size_t j) const { return n_h() + j * nx + i; }
};

inline constexpr std::uint32_t kNoEdge = std::numeric_limits<std::uint32_t>::max();

}  // namespace detail

/// Crossing point on an edge, interpolated linearly from the lower-index end.
inline Vec2 edge_crossing(const FieldGrid& g, std::size_t edge, double level) {
  const detail::EdgeIndex ix{g.nx, g.ny};
  std::size_t i0, j0, i1, j1;
  if (edge < ix.n_h()) {
    j0 = j1 = edge / (g.nx - 1);
    i0 = edge % (g.nx - 1);
    i1 = i0 + 1;
  } else {
    const std::size_t e = edge - ix.n_h();
    j0 = e / g.nx;
    i0 = i1 = e % g.nx;
    j1 = j0 + 1;
  }
  const double v0 = g.at(i0, j0), v1 = g.at(i1, j1);
  const double t = (level - v0) / (v1 - v0);
  const Vec2 p0 = g.pixel_center(i0, j0), p1 = g.pixel_center(i1, j1);
  return p0 + (p1 - p0) * t;
}

/// All level-set polylines of `grid` at `level`.  The higher side is always on
/// the left of the traversal direction.  A corner counts as high when its value
/// exceeds the level; saddle cells are split by the sign of the cell average.
/// Open chains end on the grid boundary and are flagged touches_boundary.
inline std::vector<Contour> extract_isolines(const FieldGrid& grid, double level,
                                             unsigned workers = 1) {
  for (double v : grid.values)
    if (!std::isfinite(v)) throw std::invalid_argument("extract_isolines: non-finite grid value");
  if (!std::isfinite(level)) throw std::invalid_argument("extract_isolines: non-finite level");
  std::vector<Contour> out;
  if (grid.nx < 2 || grid.ny < 2) return out;
  const detail::EdgeIndex ix{grid.nx, grid.ny};
  if (ix.total() >= detail::kNoEdge) throw std::invalid_argument("extract_isolines: grid too large");

  std::vector<std::uint32_t> next(ix.total(), detail::kNoEdge);
  std::vector<std::uint8_t> has_prev(ix.total(), 0);
  const std::size_t ncx = grid.nx - 1, ncy = grid.ny - 1;
  // An edge is an exit in exactly one of its cells and an entry in the other,
  // so every slot below is written by a single cell and rows are independent.
  parallel_chunks(ncy, 64, workers, [&](std::size_t jb, std::size_t je) {
    for (std::size_t j = jb; j < je; ++j) {
      for (std::size_t i = 0; i < ncx; ++i) {
        const double v[4] = {grid.at(i, j), grid.at(i + 1, j), grid.at(i + 1, j + 1),
                             grid.at(i, j + 1)};
        const bool hi[4] = {v[0] > level, v[1] > level, v[2] > level, v[3] > level};
        const int n_high = hi[0] + hi[1] + hi[2] + hi[3];
        if (n_high == 0 || n_high == 4) continue;
        // Edges counterclockwise: bottom, right, top, left.
        const std::size_t edge[4] = {ix.h(i, j), ix.v(i + 1, j), ix.h(i, j + 1), ix.v(i, j)};
        int exits[2], entries[2], n_ex = 0, n_en = 0;
        for (int k = 0; k < 4; ++k) {
          const bool a = hi[k], b = hi[(k + 1) & 3];
          if (a && !b) exits[n_ex++] = k;
          if (!a && b) entries[n_en++] = k;
        }
        auto link = [&](int from, int to) {
          next[edge[from]] = static_cast<std::uint32_t>(edge[to]);
          has_prev[edge[to]] = 1;
        };
        if (n_ex == 1) {
          link(exits[0], entries[0]);
        } else {
          const bool center_high = 0.25 * (v[0] + v[1] + v[2] + v[3]) > level;
          for (int e = 0; e < 2; ++e) {
            const int k = exits[e];
            const int target = center_high ? (k + 1) & 3 : (k + 3) & 3;
            link(k, target);
          }
        }
      }
    }
  });

  std::vector<std::uint8_t> used(ix.total(), 0);
  auto trace = [&](std::size_t start, bool closed) {
    Contour c;
    c.level = level;
    c.closed = closed;
    c.touches_boundary = !closed;
    std::size_t e = start;
    for (;;) {
      used[e] = 1;
      const Vec2 p = edge_crossing(grid, e, level);
      if (c.vertices.empty() || !(c.vertices.back() == p)) c.vertices.push_back(p);
      const std::uint32_t n = next[e];
      if (n == detail::kNoEdge || used[n]) break;
      e = n;
    }
    if (closed && c.vertices.size() > 1 && c.vertices.front() == c.vertices.back())
      c.vertices.pop_back();
    if (closed && c.vertices.size() < 3) return;
    if (c.vertices.size() >= 2) out.push_back(std::move(c));
  };
  // Open chains start on boundary edges that nothing enters.
  for (std::size_t e = 0; e < ix.total(); ++e)
    if (next[e] != detail::kNoEdge && !has_prev[e] && !used[e]) trace(e, false);
  for (std::size_t e = 0; e < ix.total(); ++e)
    if (next[e] != detail::kNoEdge && !used[e]) trace(e, true);
  return out;
}

/// Bilinear interpolation of the grid at x (clamped to the lattice).
inline double interpolate(const FieldGrid& g, Vec2 x) {
  const double fx = std::clamp((x.x - g.origin.x) / g.pixel_size, 0.0, static_cast<double>(g.nx - 1));
  const double fy = std::clamp((x.y - g.origin.y) / g.pixel_size, 0.0, static_cast<double>(g.ny - 1));
  const auto i = std::min(static_cast<std::size_t>(fx), g.nx - 2);
  const auto j = std::min(static_cast<std::size_t>(fy), g.ny - 2);
  const double tx = fx - static_cast<double>(i), ty = fy - static_cast<double>(j);
  return (1 - tx) * (1 - ty) * g.at(i, j) + tx * (1 - ty) * g.at(i + 1, j) +
         tx * ty * g.at(i + 1, j + 1) + (1 - tx) * ty * g.at(i, j + 1);
}

inline std::size_t segment_count(const Contour& c) {
  if (c.vertices.size() < 2) return 0;
  return c.closed ? c.vertices.size() : c.vertices.size() - 1;
}

inline std::pair<Vec2, Vec2> segment(const Contour& c, std::size_t k) {
  return {c.vertices[k], c.vertices[(k + 1) % c.vertices.size()]};
}

inline double perimeter(const Contour& c) {
  if (c.vertices.size() < 2) throw std::invalid_argument("perimeter: fewer than 2 vertices");
  CompensatedSum sum;
  for (std::size_t k = 0; k < segment_count(c); ++k) {
    const auto [a, b] = segment(c, k);
    sum.add(norm(b - a));
  }
  return sum.value();
}

enum class RadiusWeighting { ArcLength, Vertex };

/// RMS distance from the centroid.  ArcLength treats the polyline as a uniform
/// wire (exact for the piecewise-linear curve, so inserting collinear points
/// changes nothing); Vertex averages the vertices with equal weights.
inline double mean_radius(const Contour& c, RadiusWeighting mode = RadiusWeighting::ArcLength) {
  const std::size_t n = c.vertices.size();
  if (n < 3 && !(n == 2 && !c.closed))
    throw std::invalid_argument("mean_radius: too few vertices");
  const Vec2 o = c.vertices.front();
  if (mode == RadiusWeighting::Vertex) {
    CompensatedSum sx, sy, s2;
    for (Vec2 p : c.vertices) {
      const Vec2 d = p - o;
      sx.add(d.x);
      sy.add(d.y);
      s2.add(norm2(d));
    }
    const Vec2 m{sx.value() / n, sy.value() / n};
    return std::sqrt(std::max(s2.value() / n - norm2(m), 0.0));
  }
  CompensatedSum len, mx, my, m2;
  for (std::size_t k = 0; k < segment_count(c); ++k) {
    const auto [pa, pb] = segment(c, k);
    const Vec2 a = pa - o, b = pb - o;
    const double l = norm(b - a);
    len.add(l);
    mx.add(0.5 * l * (a.x + b.x));
    my.add(0.5 * l * (a.y + b.y));
    m2.add(l * (norm2(a) + dot(a, b) + norm2(b)) / 3.0);
  }
  const double total = len.value();
  if (!(total > 0.0)) return 0.0;
  const Vec2 m{mx.value() / total, my.value() / total};
  return std::sqrt(std::max(m2.value() / total - norm2(m), 0.0));
}

/// Convex hull, counterclockwise, collinear points dropped (monotone chain).
inline std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Vec2> h(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(h[k - 1] - h[k - 2], pts[i] - h[k - 2]) <= 0) --k;
    h[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(h[k - 1] - h[k - 2], pts[i] - h[k - 2]) <= 0) --k;
    h[k++] = pts[i];
  }
  h.resize(k - 1);
  return h;
}

/// Largest pairwise distance among the points (rotating calipers on the hull).
inline double diameter(const std::vector<Vec2>& points) {
  const std::vector<Vec2> h = convex_hull(points);
  if (h.size() < 2) return 0.0;
  if (h.size() == 2) return norm(h[1] - h[0]);
  const std::size_t m = h.size();
  double best = 0.0;
  std::size_t j = 1;
  for (std::size_t i = 0; i < m; ++i) {
    const Vec2 a = h[i], b = h[(i + 1) % m];
    while (std::abs(cross(b - a, h[(j + 1) % m] - a)) > std::abs(cross(b - a, h[j] - a))) j = (j + 1) % m;
    best = std::max({best, norm2(h[j] - a), norm2(h[j] - b)});
  }
  return std::sqrt(best);
}

inline double gyration_radius(const Contour& c) {
  if (c.vertices.size() < 2) throw std::invalid_argument("gyration_radius: fewer than 2 vertices");
  return 0.5 * diameter(c.vertices);
}

/// Closed, off-boundary contours with perimeter at least min_perimeter.
inline std::vector<const Contour*> closed_contours(const std::vector<Contour>& all,
                                                   double min_perimeter = 0.0) {
  std::vector<const Contour*> out;
  for (const Contour& c : all)
    if (c.closed && !c.touches_boundary && perimeter(c) >= min_perimeter) out.push_back(&c);
  return out;
}

}  // namespace batchelor

#endif
