#ifndef BATCHELOR_FRACTAL_HPP
#define BATCHELOR_FRACTAL_HPP

// Box-counting generalized dimensions with the arc-length occupation measure.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "batchelor/contour.hpp"
#include "batchelor/fit.hpp"
#include "batchelor/linalg.hpp"
#include "batchelor/parallel.hpp"

namespace batchelor {

struct BoxCountCurve {
  std::vector<double> epsilons;             // descending
  std::vector<std::vector<double>> masses;  // occupation probabilities per epsilon
  std::vector<std::size_t> n_boxes;
};

struct DimensionEstimate {
  double q = 0.0;
  double scale_lo = 0.0, scale_hi = 0.0;
  double D_q = 0.0;
  double stderr_fit = 0.0;
  std::size_t n_scales = 0;
};

/// Geometric ladder from hi down to lo (both included when they fall on it).
inline std::vector<double> epsilon_ladder(double lo, double hi, double ratio = std::sqrt(2.0)) {
  if (!(lo > 0.0) || !(hi >= lo) || !(ratio > 1.0)) throw std::invalid_argument("epsilon_ladder: bad range");
  std::vector<double> out;
  for (double e = hi; e >= lo * (1.0 - 1e-12); e /= ratio) out.push_back(e);
  return out;
}

namespace detail {

inline std::int64_t box_key(std::int64_t ix, std::int64_t iy) {
  return static_cast<std::int64_t>((static_cast<std::uint64_t>(ix) << 32) ^
                                   (static_cast<std::uint64_t>(iy) & 0xffffffffULL));
}

// Adds the length of a->b falling in each eps-box of the lattice anchored at origin.
inline void clip_segment(Vec2 a, Vec2 b, double eps, Vec2 origin,
                         std::unordered_map<std::int64_t, double>& boxes, std::vector<double>& ts) {
  const Vec2 d = b - a;
  const double len = norm(d);
  if (len == 0.0) return;
  ts.clear();
  ts.push_back(0.0);
  ts.push_back(1.0);
  auto add_lines = [&](double p0, double p1, double o) {
    if (p0 == p1) return;
    const double lo = std::min(p0, p1), hi = std::max(p0, p1);
    for (double k = std::ceil((lo - o) / eps); o + k * eps < hi; k += 1.0) {
      const double t = (o + k * eps - p0) / (p1 - p0);
      if (t > 0.0 && t < 1.0) ts.push_back(t);
    }
  };
  add_lines(a.x, b.x, origin.x);
  add_lines(a.y, b.y, origin.y);
  std::sort(ts.begin(), ts.end());
  for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
    const double dt = ts[k + 1] - ts[k];
    if (dt <= 0.0) continue;
    const double tm = 0.5 * (ts[k] + ts[k + 1]);
    const Vec2 m = a + d * tm;
    const auto ix = static_cast<std::int64_t>(std::floor((m.x - origin.x) / eps));
    const auto iy = static_cast<std::int64_t>(std::floor((m.y - origin.y) / eps));
    boxes[box_key(ix, iy)] += dt * len;
  }
}

}  // namespace detail

/// Arc-length occupation of a fixed-origin eps-lattice for every eps.
inline BoxCountCurve box_counts(const Contour& c, const std::vector<double>& epsilons,
                                Vec2 lattice_origin = {0.0, 0.0}) {
  if (c.vertices.size() < 2) throw std::invalid_argument("box_counts: empty contour");
  for (std::size_t k = 0; k < epsilons.size(); ++k) {
    if (!(epsilons[k] > 0.0)) throw std::invalid_argument("box_counts: non-positive epsilon");
    if (k > 0 && !(epsilons[k] < epsilons[k - 1]))
      throw std::invalid_argument("box_counts: epsilons must be strictly descending");
  }
  BoxCountCurve out;
  out.epsilons = epsilons;
  std::unordered_map<std::int64_t, double> boxes;
  std::vector<double> ts;
  for (double eps : epsilons) {
    boxes.clear();
    for (std::size_t k = 0; k < segment_count(c); ++k) {
      const auto [a, b] = segment(c, k);
      detail::clip_segment(a, b, eps, lattice_origin, boxes, ts);
    }
    std::vector<std::pair<std::int64_t, double>> sorted(boxes.begin(), boxes.end());
    std::sort(sorted.begin(), sorted.end());
    CompensatedSum total;
    for (const auto& kv : sorted) total.add(kv.second);
    std::vector<double> p;
    p.reserve(sorted.size());
    for (const auto& kv : sorted) p.push_back(kv.second / total.value());
    out.n_boxes.push_back(p.size());
    out.masses.push_back(std::move(p));
  }
  return out;
}

namespace detail {

// Ordinate and abscissa of the D_q regression at scale index k:
// D_q is the slope of y against x.
inline std::pair<double, double> dq_point(const BoxCountCurve& c, std::size_t k, double q) {
  const double le = std::log(c.epsilons[k]);
  if (q == 1.0) {
    CompensatedSum s;
    for (double p : c.masses[k])
      if (p > 0.0) s.add(p * std::log(p));
    return {le, s.value()};
  }
  CompensatedSum s;
  for (double p : c.masses[k]) s.add(q == 0.0 ? 1.0 : std::pow(p, q));
  return {(q - 1.0) * le, std::log(s.value())};
}

}  // namespace detail

/// Least-squares D_q over the scales inside [scale_lo, scale_hi].
inline DimensionEstimate generalized_dimension(const BoxCountCurve& c, double q, double scale_lo,
                                               double scale_hi) {
  std::vector<double> x, y;
  const double tol = 1e-9;
  for (std::size_t k = 0; k < c.epsilons.size(); ++k) {
    const double e = c.epsilons[k];
    if (e < scale_lo * (1 - tol) || e > scale_hi * (1 + tol)) continue;
    const auto [xi, yi] = detail::dq_point(c, k, q);
    x.push_back(xi);
    y.push_back(yi);
  }
  if (x.size() < 4) throw std::invalid_argument("generalized_dimension: fewer than 4 scales in window");
  const LineFit f = fit_line(x, y);
  return {q, scale_lo, scale_hi, f.slope, f.stderr_slope, x.size()};
}

/// Centered-difference slope at each interior scale.
inline std::vector<std::pair<double, double>> local_slope(const BoxCountCurve& c, double q) {
  if (c.epsilons.size() < 3) throw std::invalid_argument("local_slope: fewer than 3 scales");
  std::vector<std::pair<double, double>> pts(c.epsilons.size());
  for (std::size_t k = 0; k < c.epsilons.size(); ++k) pts[k] = detail::dq_point(c, k, q);
  std::vector<std::pair<double, double>> out;
  for (std::size_t k = 1; k + 1 < c.epsilons.size(); ++k) {
    const double dx = pts[k + 1].first - pts[k - 1].first;
    out.push_back({c.epsilons[k], (pts[k + 1].second - pts[k - 1].second) / dx});
  }
  return out;
}

struct EnsembleDimension {
  double q = 0.0;
  double mean = 0.0;
  double spread = 0.0;      // standard error of the ensemble mean
  double fit_error = 0.0;   // mean per-contour regression error
  std::size_t n = 0;
};

inline EnsembleDimension ensemble_dimension(const std::vector<DimensionEstimate>& est) {
  if (est.empty()) throw std::invalid_argument("ensemble_dimension: empty ensemble");
  EnsembleDimension e;
  e.q = est.front().q;
  e.n = est.size();
  for (const auto& d : est) {
    e.mean += d.D_q;
    e.fit_error += d.stderr_fit;
  }
  e.mean /= static_cast<double>(e.n);
  e.fit_error /= static_cast<double>(e.n);
  if (e.n > 1) {
    double v = 0;
    for (const auto& d : est) v += (d.D_q - e.mean) * (d.D_q - e.mean);
    e.spread = std::sqrt(v / static_cast<double>(e.n - 1) / static_cast<double>(e.n));
  }
  return e;
}

}  // namespace batchelor

#endif
