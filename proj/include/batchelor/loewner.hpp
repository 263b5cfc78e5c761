#ifndef BATCHELOR_LOEWNER_HPP
#define BATCHELOR_LOEWNER_HPP

// Discrete chordal Loewner chain with vertical-slit maps (the zipper):
// curve -> driving function (unzip) and driving function -> curve (zip),
// and diffusivity estimates for ensembles of driving functions.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "batchelor/contour.hpp"
#include "batchelor/fit.hpp"
#include "batchelor/linalg.hpp"

namespace batchelor {

using cplx = std::complex<double>;

struct ChordalCurve {
  std::vector<Vec2> points;  // points[0] on the real axis, the rest in the closed upper half plane
};

struct DrivingFunction {
  std::vector<double> t;   // half-plane capacity, strictly increasing, t[0] = 0
  std::vector<double> xi;

  std::size_t size() const { return t.size(); }
  double t_max() const { return t.empty() ? 0.0 : t.back(); }
};

struct loewner_breakdown : std::runtime_error {
  std::size_t step;
  loewner_breakdown(const std::string& what, std::size_t k) : std::runtime_error(what), step(k) {}
};

namespace detail {

// Root of w^2 = a in the closed upper half plane; on the real axis the sign
// follows `side` (the real part of z - xi), so the two banks of a slit separate.
inline cplx upper_root(cplx a, double side) {
  cplx w = std::sqrt(a);
  if (w.imag() < 0.0) w = -w;
  if (w.imag() == 0.0) w = cplx(std::copysign(std::abs(w.real()), side), 0.0);
  return w;
}

// g(z) = xi + sqrt((z - xi)^2 + h^2): removes the slit [xi, xi + i h].
inline cplx slit_map(cplx z, double xi, double h) {
  const cplx d = z - xi;
  return xi + upper_root(d * d + h * h, d.real());
}

// g^{-1}(z) = xi + sqrt((z - xi)^2 - h^2): grows the slit back.
inline cplx slit_inverse(cplx z, double xi, double h) {
  const cplx d = z - xi;
  return xi + upper_root(d * d - h * h, d.real());
}

inline cplx to_c(Vec2 v) { return {v.x, v.y}; }
inline Vec2 to_v(cplx z) { return {z.real(), z.imag()}; }

}  // namespace detail

inline void validate(const ChordalCurve& c) {
  if (c.points.size() < 2) throw std::invalid_argument("chordal curve needs at least 2 points");
  if (c.points[0].y != 0.0) throw std::invalid_argument("chordal curve must start on the real axis");
  for (std::size_t k = 0; k < c.points.size(); ++k) {
    if (!std::isfinite(c.points[k].x) || !std::isfinite(c.points[k].y))
      throw std::invalid_argument("chordal curve has non-finite points");
    if (c.points[k].y < 0.0) throw std::invalid_argument("chordal curve leaves the upper half plane");
    if (k > 0 && c.points[k] == c.points[k - 1])
      throw std::invalid_argument("chordal curve has repeated consecutive points");
  }
}

struct UnzipResult {
  DrivingFunction driving;
  ChordalCurve remainder;  // images of the points not yet unzipped; first is the current tip on the axis
};

/// Unzips the first `steps` points after the root.  The remainder, unzipped on
/// its own, continues the same chain (capacities add).
inline UnzipResult unzip_prefix(const ChordalCurve& curve, std::size_t steps) {
  validate(curve);
  const std::size_t n = curve.points.size();
  steps = std::min(steps, n - 1);
  std::vector<cplx> z(n);
  for (std::size_t k = 0; k < n; ++k) z[k] = detail::to_c(curve.points[k]);
  double scale = 0.0;
  for (const cplx& p : z) scale = std::max(scale, std::abs(p - z[0]));
  const double tol = 1e-9 * std::max(scale, 1e-300);

  UnzipResult out;
  DrivingFunction& d = out.driving;
  d.t.push_back(0.0);
  d.xi.push_back(z[0].real());
  double t = 0.0;
  for (std::size_t k = 1; k <= steps; ++k) {
    const double xi = z[k].real();
    double h = z[k].imag();
    if (!std::isfinite(xi) || !std::isfinite(h))
      throw loewner_breakdown("unzip: non-finite image at step " + std::to_string(k), k);
    if (h < 0.0) {
      if (h < -tol) throw loewner_breakdown("unzip: tip fell below the axis at step " + std::to_string(k), k);
      h = 0.0;
    }
    if (h > 0.0) {
      for (std::size_t j = k + 1; j < n; ++j) z[j] = detail::slit_map(z[j], xi, h);
      t += 0.25 * h * h;
      d.t.push_back(t);
      d.xi.push_back(xi);
    }
    z[k] = cplx(xi, 0.0);
  }
  out.remainder.points.reserve(n - steps);
  out.remainder.points.push_back({z[steps].real(), 0.0});
  for (std::size_t j = steps + 1; j < n; ++j) {
    const Vec2 p = detail::to_v(z[j]);
    out.remainder.points.push_back({p.x, std::max(p.y, 0.0)});
  }
  return out;
}

/// Driving function of the whole curve.  Steps that land exactly on the axis
/// add no capacity and are skipped.
inline DrivingFunction unzip(const ChordalCurve& curve) {
  return unzip_prefix(curve, curve.points.size()).driving;
}

inline void validate(const DrivingFunction& d) {
  if (d.t.size() != d.xi.size() || d.t.empty()) throw std::invalid_argument("driving function: bad sizes");
  for (std::size_t k = 0; k < d.t.size(); ++k) {
    if (!std::isfinite(d.t[k]) || !std::isfinite(d.xi[k]))
      throw std::invalid_argument("driving function: non-finite sample");
    if (k > 0 && !(d.t[k] > d.t[k - 1])) throw std::invalid_argument("driving function: time not increasing");
  }
  if (d.t[0] != 0.0) throw std::invalid_argument("driving function must start at t = 0");
}

/// Trace of the piecewise-constant driving: the tip of step k is
/// g_1^{-1} o ... o g_{k-1}^{-1} (xi_k + i h_k), h_k = 2 sqrt(t_k - t_{k-1}).
inline ChordalCurve zip(const DrivingFunction& d) {
  validate(d);
  const std::size_t n = d.size();
  std::vector<double> h(n, 0.0);
  for (std::size_t k = 1; k < n; ++k) h[k] = 2.0 * std::sqrt(d.t[k] - d.t[k - 1]);
  ChordalCurve c;
  c.points.reserve(n);
  c.points.push_back({d.xi[0], 0.0});
  for (std::size_t k = 1; k < n; ++k) {
    cplx z(d.xi[k], h[k]);
    for (std::size_t j = k - 1; j >= 1; --j) z = detail::slit_inverse(z, d.xi[j], h[j]);
    if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
      throw loewner_breakdown("zip: non-finite trace point at step " + std::to_string(k), k);
    c.points.push_back({z.real(), std::max(z.imag(), 0.0)});
  }
  return c;
}

inline ChordalCurve rescale_curve(const ChordalCurve& c, double factor_x, double factor_y) {
  if (!(factor_x > 0.0) || !(factor_y > 0.0)) throw std::invalid_argument("rescale_curve: factors must be > 0");
  ChordalCurve out = c;
  for (Vec2& p : out.points) p = {p.x * factor_x, p.y * factor_y};
  return out;
}

/// Brownian driving sqrt(kappa) B(t) on n equal capacity steps up to t_max.
inline DrivingFunction brownian_driving(double kappa, double t_max, std::size_t n_steps, std::uint64_t seed) {
  if (!(kappa >= 0.0) || !(t_max > 0.0) || n_steps == 0) throw std::invalid_argument("brownian_driving: bad args");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  DrivingFunction d;
  d.t.reserve(n_steps + 1);
  d.xi.reserve(n_steps + 1);
  d.t.push_back(0.0);
  d.xi.push_back(0.0);
  const double dt = t_max / static_cast<double>(n_steps);
  for (std::size_t k = 1; k <= n_steps; ++k) {
    d.t.push_back(dt * static_cast<double>(k));
    d.xi.push_back(d.xi.back() + std::sqrt(kappa * dt) * g(rng));
  }
  return d;
}

/// Polyline resampled at uniform arc-length spacing `step` (last point kept).
inline std::vector<Vec2> resample_polyline(const std::vector<Vec2>& pts, double step) {
  if (pts.size() < 2 || !(step > 0.0)) return pts;
  std::vector<Vec2> out{pts.front()};
  double carry = 0.0;  // arc length since the last emitted point
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    const Vec2 a = pts[k], b = pts[k + 1];
    const double len = norm(b - a);
    if (len == 0.0) continue;
    double s = step - carry;
    while (s < len) {
      out.push_back(a + (b - a) * (s / len));
      s += step;
    }
    carry = len - (s - step);
  }
  if (!(out.back() == pts.back())) {
    if (norm(out.back() - pts.back()) < 1e-3 * step) out.back() = pts.back();
    else out.push_back(pts.back());
  }
  return out;
}

struct ChordalOptions {
  double min_perimeter = 10.0;
  double drop_fraction = 0.05;
  double resample_step = 0.0;   // 0: keep the contour's own vertices
  std::size_t max_points = 100000;
};

/// Closed loop -> chordal curve: cut at the lowest vertex (ties: smallest x),
/// translate it to the origin, run counterclockwise and drop the final
/// drop_fraction of arc length.
inline ChordalCurve prepare_chordal(const Contour& c, const ChordalOptions& opt = {}) {
  if (!c.closed || c.touches_boundary) throw std::invalid_argument("prepare_chordal: contour is not a closed interior loop");
  if (c.vertices.size() < 3) throw std::invalid_argument("prepare_chordal: too few vertices");
  const double P = perimeter(c);
  if (P < opt.min_perimeter) throw std::invalid_argument("prepare_chordal: contour shorter than the minimum perimeter");
  const std::size_t n = c.vertices.size();
  std::size_t lo = 0;
  for (std::size_t k = 1; k < n; ++k) {
    const Vec2 p = c.vertices[k], q = c.vertices[lo];
    if (p.y < q.y || (p.y == q.y && p.x < q.x)) lo = k;
  }
  double area2 = 0.0;
  for (std::size_t k = 0; k < n; ++k) area2 += cross(c.vertices[k], c.vertices[(k + 1) % n]);
  const bool ccw = area2 > 0.0;
  const Vec2 origin = c.vertices[lo];
  std::vector<Vec2> loop;
  loop.reserve(n + 1);
  for (std::size_t m = 0; m <= n; ++m) {
    const std::size_t k = ccw ? (lo + m) % n : (lo + n - m) % n;
    loop.push_back(c.vertices[k] - origin);
  }
  // Keep the first (1 - drop) of arc length.
  const double keep = (1.0 - opt.drop_fraction) * P;
  std::vector<Vec2> kept{loop.front()};
  double s = 0.0;
  for (std::size_t k = 0; k + 1 < loop.size(); ++k) {
    const double len = norm(loop[k + 1] - loop[k]);
    if (s + len >= keep) {
      kept.push_back(loop[k] + (loop[k + 1] - loop[k]) * ((keep - s) / len));
      break;
    }
    s += len;
    kept.push_back(loop[k + 1]);
  }
  double step = opt.resample_step;
  if (opt.max_points > 1 && kept.size() > opt.max_points) step = std::max(step, keep / static_cast<double>(opt.max_points - 1));
  if (step > 0.0) kept = resample_polyline(kept, step);
  ChordalCurve out;
  out.points.reserve(kept.size());
  for (Vec2 p : kept) {
    p.y = std::max(p.y, 0.0);
    if (out.points.empty() || !(out.points.back() == p)) out.points.push_back(p);
  }
  out.points.front() = {0.0, 0.0};
  return out;
}

enum class DiffusivityMethod { TimeAveraged, Ensemble };

struct DiffusivityEstimate {
  double kappa = 0.0;
  double kappa_error = 0.0;  // jackknife over drivings
  DiffusivityMethod method = DiffusivityMethod::TimeAveraged;
  double t_lo = 0.0, t_hi = 0.0;
  std::size_t n_contours = 0;
  // Ensemble curves on the common ladder.
  std::vector<double> curve_t, curve_xi2, curve_xi2_over_t;
  std::vector<std::size_t> curve_n;
};

/// Linear interpolation of xi at t (t within the sampled range).
inline double driving_at(const DrivingFunction& d, double t) {
  if (t <= d.t.front()) return d.xi.front();
  if (t >= d.t.back()) return d.xi.back();
  const auto it = std::upper_bound(d.t.begin(), d.t.end(), t);
  const std::size_t k = static_cast<std::size_t>(it - d.t.begin());
  const double f = (t - d.t[k - 1]) / (d.t[k] - d.t[k - 1]);
  return d.xi[k - 1] + f * (d.xi[k] - d.xi[k - 1]);
}

namespace detail {

struct MsdSums {
  std::vector<double> sum_sq, count;
};

// Increment second moments at each lag (multiples of dt) over every origin.
inline MsdSums increment_msd(const DrivingFunction& d, double dt, const std::vector<std::size_t>& lags) {
  const auto m = static_cast<std::size_t>(std::floor(d.t_max() / dt));
  std::vector<double> x(m + 1);
  for (std::size_t i = 0; i <= m; ++i) x[i] = driving_at(d, dt * static_cast<double>(i)) - d.xi.front();
  MsdSums s{std::vector<double>(lags.size(), 0.0), std::vector<double>(lags.size(), 0.0)};
  for (std::size_t l = 0; l < lags.size(); ++l) {
    const std::size_t lag = lags[l];
    for (std::size_t i = 0; i + lag <= m; ++i) {
      const double inc = x[i + lag] - x[i];
      s.sum_sq[l] += inc * inc;
      s.count[l] += 1.0;
    }
  }
  return s;
}

// Slope through the origin of msd(tau) = kappa tau.
inline double msd_slope(const std::vector<double>& tau, const std::vector<double>& sum_sq,
                        const std::vector<double>& count) {
  double num = 0, den = 0;
  for (std::size_t l = 0; l < tau.size(); ++l) {
    if (count[l] <= 0) continue;
    const double msd = sum_sq[l] / count[l];
    num += msd * tau[l];
    den += tau[l] * tau[l];
  }
  return den > 0 ? num / den : 0.0;
}

}  // namespace detail

/// kappa from an ensemble of drivings over the capacity-time window [t_lo, t_hi].
/// TimeAveraged: slope of the increment mean square against lag, pooled over
/// every origin along every driving.  Ensemble: slope of <xi^2(t)> against t.
/// Both report the ensemble <xi^2(t)> and <xi^2>/t curves on n_ladder points.
inline DiffusivityEstimate effective_diffusivity(const std::vector<DrivingFunction>& drivings, double t_lo,
                                                 double t_hi,
                                                 DiffusivityMethod method = DiffusivityMethod::TimeAveraged,
                                                 std::size_t n_ladder = 64) {
  if (!(t_hi > t_lo) || !(t_lo >= 0.0)) throw std::invalid_argument("effective_diffusivity: bad window");
  std::vector<const DrivingFunction*> use;
  for (const auto& d : drivings)
    if (d.size() >= 2 && d.t_max() >= t_hi) use.push_back(&d);
  if (use.size() < 2)
    throw insufficient_data("effective_diffusivity: fewer than 2 drivings reach the window end");
  DiffusivityEstimate e;
  e.method = method;
  e.t_lo = t_lo;
  e.t_hi = t_hi;
  e.n_contours = use.size();
  const std::size_t nd = use.size();

  // Ensemble curve on a uniform ladder up to t_hi.
  n_ladder = std::max<std::size_t>(n_ladder, 4);
  std::vector<std::vector<double>> xi2(nd, std::vector<double>(n_ladder));
  for (std::size_t j = 0; j < n_ladder; ++j) e.curve_t.push_back(t_hi * static_cast<double>(j + 1) / n_ladder);
  for (std::size_t i = 0; i < nd; ++i)
    for (std::size_t j = 0; j < n_ladder; ++j) {
      const double x = driving_at(*use[i], e.curve_t[j]) - use[i]->xi.front();
      xi2[i][j] = x * x;
    }
  for (std::size_t j = 0; j < n_ladder; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < nd; ++i) s += xi2[i][j];
    e.curve_xi2.push_back(s / nd);
    e.curve_xi2_over_t.push_back(s / nd / e.curve_t[j]);
    e.curve_n.push_back(nd);
  }

  std::vector<double> partial(nd);
  if (method == DiffusivityMethod::Ensemble) {
    auto fit = [&](std::size_t skip) {
      std::vector<double> x, y;
      for (std::size_t j = 0; j < n_ladder; ++j) {
        if (e.curve_t[j] < t_lo) continue;
        double s = 0;
        for (std::size_t i = 0; i < nd; ++i)
          if (i != skip) s += xi2[i][j];
        x.push_back(e.curve_t[j]);
        y.push_back(s / static_cast<double>(skip < nd ? nd - 1 : nd));
      }
      if (x.size() < 2) throw std::invalid_argument("effective_diffusivity: window holds fewer than 2 ladder points");
      return fit_line(x, y).slope;
    };
    e.kappa = fit(nd);
    for (std::size_t i = 0; i < nd; ++i) partial[i] = fit(i);
  } else {
    // Uniform resampling step: the finest mean capacity step of the ensemble,
    // but never more than 20000 points up to t_hi.
    double dt = INFINITY;
    for (const auto* d : use) dt = std::min(dt, d->t_max() / static_cast<double>(d->size() - 1));
    dt = std::max(dt, t_hi / 20000.0);
    std::vector<std::size_t> lags;
    const auto l_lo = static_cast<std::size_t>(std::max(1.0, std::ceil(t_lo / dt)));
    const auto l_hi = static_cast<std::size_t>(std::floor(t_hi / dt));
    if (l_hi < l_lo) throw std::invalid_argument("effective_diffusivity: window narrower than the sampling step");
    const std::size_t n_lags = std::min<std::size_t>(16, l_hi - l_lo + 1);
    for (std::size_t l = 0; l < n_lags; ++l) {
      const auto lag = n_lags == 1 ? l_lo : l_lo + (l_hi - l_lo) * l / (n_lags - 1);
      if (lags.empty() || lag != lags.back()) lags.push_back(lag);
    }
    std::vector<double> tau;
    for (auto lag : lags) tau.push_back(dt * static_cast<double>(lag));
    std::vector<detail::MsdSums> per(nd);
    for (std::size_t i = 0; i < nd; ++i) per[i] = detail::increment_msd(*use[i], dt, lags);
    auto pooled = [&](std::size_t skip) {
      std::vector<double> sq(lags.size(), 0.0), cnt(lags.size(), 0.0);
      for (std::size_t i = 0; i < nd; ++i) {
        if (i == skip) continue;
        for (std::size_t l = 0; l < lags.size(); ++l) {
          sq[l] += per[i].sum_sq[l];
          cnt[l] += per[i].count[l];
        }
      }
      return detail::msd_slope(tau, sq, cnt);
    };
    e.kappa = pooled(nd);
    for (std::size_t i = 0; i < nd; ++i) partial[i] = pooled(i);
  }
  double mean = 0;
  for (double p : partial) mean += p;
  mean /= static_cast<double>(nd);
  double v = 0;
  for (double p : partial) v += (p - mean) * (p - mean);
  e.kappa_error = std::sqrt(v * static_cast<double>(nd - 1) / static_cast<double>(nd));
  e.kappa = std::max(e.kappa, 0.0);
  return e;
}

}  // namespace batchelor

#endif
