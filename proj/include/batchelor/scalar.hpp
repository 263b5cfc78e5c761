#ifndef BATCHELOR_SCALAR_HPP
#define BATCHELOR_SCALAR_HPP

// Blob representation of the pumped, advected, diffusing scalar field.
//
// Every pumping event deposits theta0 exp(-|r - r_c|^2 / 2) (L = 1).  Under the
// linear flow the blob stays Gaussian: its center follows W(t, t0) r_c and its
// covariance is the evolved I(t, t0), so
//   theta(x) = sum theta0 / sqrt(det I) exp(-1/2 (x - c)^T I^{-1} (x - c)).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "batchelor/flow.hpp"
#include "batchelor/geometry.hpp"
#include "batchelor/linalg.hpp"
#include "batchelor/parallel.hpp"

namespace batchelor {

struct Blob {
  double t0 = 0.0;
  Vec2 r_c;
  double theta0 = 0.0;
  EvolutionState evo;

  Vec2 center() const { return evo.W.apply(r_c); }
  double peak() const { return theta0 / std::sqrt(evo.I.det()); }
};

inline Blob make_blob(double t0, Vec2 r_c, double theta0) {
  return {t0, r_c, theta0, EvolutionState::fresh(t0)};
}

struct PumpingConfig {
  double nu = 0.01;          // events per unit time per unit area
  double amp_sigma = 1.0;    // theta0 ~ N(0, amp_sigma^2)
  double spawn_margin = 3.0;

  void validate() const {
    if (!(nu > 0.0)) throw std::invalid_argument("pumping.nu must be > 0");
    if (!(amp_sigma > 0.0)) throw std::invalid_argument("pumping.amp_sigma must be > 0");
    if (!(spawn_margin >= 3.0)) throw std::invalid_argument("pumping.spawn_margin must be >= 3");
  }
};

struct BlobDatabase {
  std::vector<Blob> blobs;
  double t_now = 0.0;
  Rect window;
  double spawn_margin = 3.0;
  double cull_threshold = 1e-4;
  /// Gaussian truncation radius in units of the blob's own standard deviations.
  double support_sigma = 6.0;

  Rect expanded_window() const { return window.expanded(spawn_margin); }
  bool born(const Blob& b) const { return b.t0 <= t_now; }
  std::size_t born_count() const {
    return static_cast<std::size_t>(
        std::count_if(blobs.begin(), blobs.end(), [&](const Blob& b) { return born(b); }));
  }
};

/// Adds Poisson(nu * area(window + margin) * (t_to - t_from)) blobs with centers
/// uniform over the expanded window at their creation time, creation times
/// uniform in [t_from, t_to) and theta0 ~ N(0, amp_sigma^2).
inline std::size_t spawn_blobs(BlobDatabase& db, const PumpingConfig& pumping, double t_from,
                               double t_to, std::uint64_t stream) {
  if (t_to < t_from) throw std::invalid_argument("spawn_blobs: negative duration");
  if (t_from < db.t_now)
    throw std::invalid_argument("spawn_blobs: creation interval precedes database time");
  if (pumping.nu <= 0.0 || t_to == t_from) return 0;
  const Rect region = db.window.expanded(pumping.spawn_margin);
  std::mt19937_64 rng(stream);
  std::poisson_distribution<std::uint64_t> count_dist(pumping.nu * region.area() * (t_to - t_from));
  const std::uint64_t count = count_dist(rng);
  std::uniform_real_distribution<double> ux(region.x0, region.x1), uy(region.y0, region.y1),
      ut(t_from, t_to);
  std::normal_distribution<double> amp(0.0, pumping.amp_sigma);
  db.blobs.reserve(db.blobs.size() + count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const double t0 = ut(rng);
    const Vec2 rc{ux(rng), uy(rng)};
    db.blobs.push_back(make_blob(t0, rc, amp(rng)));
  }
  return count;
}

/// Standard normal draw conditioned on |z| > a (random sign).  Plain rejection
/// near the center, Marsaglia's exponential tail method beyond a = 1.
template <class Rng>
double normal_beyond(Rng& rng, double a) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double z;
  if (a < 1.0) {
    std::normal_distribution<double> g;
    do z = g(rng);
    while (!(std::abs(z) > a));
    return z;
  }
  for (;;) {
    const double u1 = 1.0 - unit(rng), u2 = unit(rng);
    z = std::sqrt(a * a - 2.0 * std::log(u1));
    if (u2 * z < a) break;
  }
  return unit(rng) < 0.5 ? -z : z;
}

/// Lookahead of the Lagrangian operators from a birth time to a fixed snapshot
/// time T, tabulated at the flow's step boundaries going backwards from T.
/// Used to pump only where a blob can still reach the render window at T.
class SnapshotForecast {
 public:
  struct Node {
    double t = 0.0;         // birth time
    EvolutionState state;   // operators from t to T
  };

  /// Tabulates nodes back from T until a blob of amplitude `max_amplitude`
  /// born at the node would have decayed below `threshold` at T.
  SnapshotForecast(const FlowRealization& flow, double t_snapshot, double max_amplitude,
                   double threshold)
      : t_snapshot_(t_snapshot) {
    if (t_snapshot < flow.t_start()) throw std::invalid_argument("snapshot precedes flow start");
    nodes_.push_back({t_snapshot, EvolutionState::fresh(t_snapshot)});
    std::size_t k = flow.step_at(t_snapshot);
    double t = flow.step_begin(k);
    if (t == t_snapshot) {
      if (k == 0) return;
      --k;
      t = flow.step_begin(k);
    }
    for (;;) {
      EvolutionState s = EvolutionState::fresh(t);
      advance_to(s, flow, t_snapshot);
      nodes_.push_back({t, s});
      if (threshold > 0.0 && max_amplitude / std::sqrt(s.I.det()) < threshold) break;
      if (k == 0) break;
      --k;
      t = flow.step_begin(k);
    }
  }

  double t_snapshot() const { return t_snapshot_; }
  /// Oldest tabulated birth time; older births cannot reach the threshold.
  double earliest() const { return nodes_.back().t; }
  /// nodes()[0] is T itself, later entries are older.
  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  double t_snapshot_;
  std::vector<Node> nodes_;
};

/// Pumping restricted to blobs that can influence the snapshot at T.  Births
/// are a Poisson process of rate nu per unit area, sampled directly in the
/// frame of time T (the flow is area preserving, so the density there is nu as
/// well) over the region from which a blob's truncated support can reach the
/// expanded window; r_c is then pulled back through W(T, t0).
inline std::size_t spawn_blobs_for_snapshot(BlobDatabase& db, const PumpingConfig& pumping,
                                            const FlowRealization& flow,
                                            const SnapshotForecast& forecast, double t_from,
                                            double t_to, std::uint64_t stream) {
  if (t_to < t_from) throw std::invalid_argument("spawn_blobs_for_snapshot: negative duration");
  if (t_from < db.t_now)
    throw std::invalid_argument("spawn_blobs_for_snapshot: creation interval precedes database time");
  if (pumping.nu <= 0.0) return 0;
  const Rect target = db.window.expanded(pumping.spawn_margin);
  const double s = db.support_sigma;
  std::mt19937_64 rng(stream);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto& nodes = forecast.nodes();
  std::size_t added = 0;
  for (std::size_t n = 0; n + 1 < nodes.size(); ++n) {
    const auto& young = nodes[n];
    const auto& old = nodes[n + 1];
    const double lo = std::max(old.t, t_from);
    const double hi = std::min(young.t, t_to);
    if (!(hi > lo)) continue;
    // Region: window + margin dilated by the truncated support, in the frame
    // of the older node's major axis, inflated to cover births within the step.
    const Vec2 u = old.state.I.major_axis();
    const Vec2 v{-u.y, u.x};
    const Sym2 mo = old.state.I.matrix();
    const Sym2 my = young.state.I.matrix();
    const double ext_u = 1.05 * s * std::sqrt(std::max(mo.quad(u), my.quad(u)));
    const double ext_v = 1.05 * s * std::sqrt(std::max(mo.quad(v), my.quad(v)));
    double pu_lo = std::numeric_limits<double>::infinity(), pu_hi = -pu_lo;
    double pv_lo = pu_lo, pv_hi = -pu_lo;
    for (Vec2 corner : {Vec2{target.x0, target.y0}, Vec2{target.x1, target.y0},
                        Vec2{target.x1, target.y1}, Vec2{target.x0, target.y1}}) {
      pu_lo = std::min(pu_lo, dot(corner, u));
      pu_hi = std::max(pu_hi, dot(corner, u));
      pv_lo = std::min(pv_lo, dot(corner, v));
      pv_hi = std::max(pv_hi, dot(corner, v));
    }
    pu_lo -= ext_u;
    pu_hi += ext_u;
    pv_lo -= ext_v;
    pv_hi += ext_v;
    const double area = (pu_hi - pu_lo) * (pv_hi - pv_lo);
    // Blobs whose amplitude at T is below the cull threshold even with the
    // younger node's det never matter; draw only the survivors.
    const double young_det = young.state.I.det();
    const double cut = db.cull_threshold * std::sqrt(young_det) / pumping.amp_sigma;
    const double keep = std::erfc(cut / std::sqrt(2.0));
    if (!(keep > 0.0)) continue;
    std::poisson_distribution<std::uint64_t> count_dist(pumping.nu * area * (hi - lo) * keep);
    const std::uint64_t count = count_dist(rng);
    const std::size_t step = flow.step_at(old.t);
    const Mat2& sigma = flow.sample(step).sigma;
    for (std::uint64_t i = 0; i < count; ++i) {
      const double t0 = lo + (hi - lo) * unit(rng);
      const double theta0 = pumping.amp_sigma * normal_beyond(rng, cut);
      const double a = pu_lo + (pu_hi - pu_lo) * unit(rng);
      const double b = pv_lo + (pv_hi - pv_lo) * unit(rng);
      const Vec2 y = u * a + v * b;
      const Vec2 pulled = young.state.W.inverse_apply(y);
      const Vec2 rc = expm_traceless(sigma * -(young.t - t0)) * pulled;
      db.blobs.push_back(make_blob(t0, rc, theta0));
      ++added;
    }
  }
  return added;
}

/// Advances every blob born up to t_target through the shared flow.
inline void evolve_to(BlobDatabase& db, const FlowRealization& flow, double t_target,
                      unsigned workers = 1) {
  if (t_target < db.t_now) throw std::invalid_argument("evolve_to: target precedes database time");
  parallel_chunks(db.blobs.size(), 256, workers, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      Blob& blob = db.blobs[i];
      if (blob.t0 > t_target) continue;
      advance_to(blob.evo, flow, t_target);
    }
  });
  db.t_now = t_target;
}

/// Amplitude-only cull.  Safe at any time for snapshot-targeted pumping: a blob
/// far from the window now may still be carried into it by T, but its peak
/// never grows.
inline std::size_t cull_faint(BlobDatabase& db) {
  const std::size_t before = db.blobs.size();
  std::erase_if(db.blobs, [&](const Blob& b) { return db.born(b) && std::abs(b.peak()) < db.cull_threshold; });
  return before - db.blobs.size();
}

/// Removes blobs whose peak fell below cull_threshold or whose truncated
/// support no longer meets the expanded window.  Unborn blobs are kept.
inline std::size_t cull(BlobDatabase& db) {
  const Rect region = db.expanded_window();
  const double s2 = db.support_sigma * db.support_sigma;
  const std::size_t before = db.blobs.size();
  std::erase_if(db.blobs, [&](const Blob& b) {
    if (!db.born(b)) return false;
    if (std::abs(b.peak()) < db.cull_threshold) return true;
    return min_inverse_quad_on_rect(b.evo.I, b.center(), region) > s2;
  });
  return before - db.blobs.size();
}

/// Blob covariance seen through an isotropic Gaussian filter of std `smoothing`.
inline Covariance filtered(const Covariance& I, double smoothing) {
  Covariance c = I;
  c.add_isotropic(smoothing * smoothing);
  return c;
}

/// theta(x), optionally convolved with an isotropic Gaussian of std `smoothing`
/// (exact for Gaussian blobs: I -> I + smoothing^2, integral kept).
inline double eval_point(const BlobDatabase& db, Vec2 x, double smoothing = 0.0) {
  const double s2 = db.support_sigma * db.support_sigma;
  CompensatedSum acc;
  for (const Blob& b : db.blobs) {
    if (!db.born(b)) continue;
    const Covariance I = filtered(b.evo.I, smoothing);
    const double q = I.inverse_quad(x - b.center());
    if (q <= s2) acc.add(b.theta0 / std::sqrt(I.det()) * std::exp(-0.5 * q));
  }
  return acc.value();
}

/// Geometry of a pixel lattice; origin is the center of pixel (0, 0).
struct GridShape {
  Vec2 origin;
  double pixel_size = 1.0;
  std::size_t nx = 0, ny = 0;

  /// Bounding box of the pixel centers.
  Rect extent() const {
    return {origin.x, origin.y, origin.x + pixel_size * static_cast<double>(nx - 1),
            origin.y + pixel_size * static_cast<double>(ny - 1)};
  }
  Vec2 pixel_center(std::size_t i, std::size_t j) const {
    return {origin.x + pixel_size * static_cast<double>(i),
            origin.y + pixel_size * static_cast<double>(j)};
  }

  /// nx x ny lattice filling `window` with spacing pixel_size, centered.
  static GridShape covering(const Rect& window, double pixel_size) {
    const auto nx = static_cast<std::size_t>(std::floor(window.width() / pixel_size)) + 1;
    const auto ny = static_cast<std::size_t>(std::floor(window.height() / pixel_size)) + 1;
    const double used_x = pixel_size * static_cast<double>(nx - 1);
    const double used_y = pixel_size * static_cast<double>(ny - 1);
    return {{window.x0 + 0.5 * (window.width() - used_x), window.y0 + 0.5 * (window.height() - used_y)},
            pixel_size, nx, ny};
  }
};

/// Rendered snapshot; values row-major, values[j * nx + i] at pixel (i, j).
struct FieldGrid {
  Vec2 origin;
  double pixel_size = 1.0;
  std::size_t nx = 0, ny = 0;
  std::vector<double> values;

  FieldGrid() = default;
  explicit FieldGrid(const GridShape& g, double fill = 0.0)
      : origin(g.origin), pixel_size(g.pixel_size), nx(g.nx), ny(g.ny), values(g.nx * g.ny, fill) {}

  GridShape shape() const { return {origin, pixel_size, nx, ny}; }
  double& at(std::size_t i, std::size_t j) { return values[j * nx + i]; }
  double at(std::size_t i, std::size_t j) const { return values[j * nx + i]; }
  Vec2 pixel_center(std::size_t i, std::size_t j) const { return shape().pixel_center(i, j); }
};

namespace detail {

struct RasterBlob {
  Vec2 c;
  double ux, uy;
  double inv_major, inv_minor;
  double amp;
  double alpha, beta;  // x-quadratic coefficients of the inverse covariance
  double y_half;

  double quad(Vec2 d) const {
    const double p = ux * d.x + uy * d.y;
    const double q = ux * d.y - uy * d.x;
    return p * p * inv_major + q * q * inv_minor;
  }
};

inline RasterBlob raster_blob(const Blob& b, double s, double smoothing) {
  RasterBlob r;
  r.c = b.center();
  const Covariance I = filtered(b.evo.I, smoothing);
  const Vec2 u = I.major_axis();
  r.ux = u.x;
  r.uy = u.y;
  r.inv_major = 1.0 / I.major();
  r.inv_minor = 1.0 / I.minor();
  r.amp = smoothing == 0.0 ? b.peak() : b.theta0 / std::sqrt(I.det());
  r.alpha = u.x * u.x * r.inv_major + u.y * u.y * r.inv_minor;
  r.beta = u.x * u.y * (r.inv_major - r.inv_minor);
  const double iyy = I.major() * u.y * u.y + I.minor() * u.x * u.x;
  r.y_half = s * std::sqrt(iyy);
  return r;
}

}  // namespace detail

/// Renders theta at the pixel centers.  Each blob is rasterized only over the
/// rows and row intervals its truncated ellipse covers; per-pixel sums are
/// taken in blob order with compensation, so the result does not depend on
/// the worker count and agrees with a naive all-pairs sum to rounding.
/// smoothing > 0 renders the field convolved with a Gaussian of that std.
inline FieldGrid render(const BlobDatabase& db, const GridShape& shape, unsigned workers = 1,
                        double smoothing = 0.0) {
  if (!(smoothing >= 0.0) || !std::isfinite(smoothing)) throw std::invalid_argument("render: bad smoothing");
  if (shape.nx == 0 || shape.ny == 0 || !(shape.pixel_size > 0.0))
    throw std::invalid_argument("render: empty grid");
  const Rect ext = shape.extent();
  const double tol = 1e-9 * std::max(1.0, shape.pixel_size * static_cast<double>(shape.nx + shape.ny));
  if (!db.window.expanded(tol).contains(ext))
    throw std::invalid_argument("render: grid exceeds the database window");

  const double s = db.support_sigma;
  const double s2 = s * s;
  std::vector<detail::RasterBlob> rb;
  rb.reserve(db.blobs.size());
  for (const Blob& b : db.blobs)
    if (db.born(b)) rb.push_back(detail::raster_blob(b, s, smoothing));

  constexpr std::size_t kBand = 32;
  const std::size_t n_bands = (shape.ny + kBand - 1) / kBand;
  const double h = shape.pixel_size;
  const double inv_h = 1.0 / h;
  std::vector<std::vector<std::uint32_t>> band_lists(n_bands);
  for (std::uint32_t idx = 0; idx < rb.size(); ++idx) {
    const auto& r = rb[idx];
    const double jlo = std::ceil((r.c.y - r.y_half - shape.origin.y) * inv_h) - 1.0;
    const double jhi = std::floor((r.c.y + r.y_half - shape.origin.y) * inv_h) + 1.0;
    if (jhi < 0.0 || jlo > static_cast<double>(shape.ny - 1)) continue;
    const auto j0 = static_cast<std::size_t>(std::max(jlo, 0.0));
    const auto j1 = static_cast<std::size_t>(std::min(jhi, static_cast<double>(shape.ny - 1)));
    for (std::size_t band = j0 / kBand; band <= j1 / kBand; ++band) band_lists[band].push_back(idx);
  }

  FieldGrid grid(shape);
  parallel_chunks(n_bands, 1, workers, [&](std::size_t band_begin, std::size_t band_end) {
    for (std::size_t band = band_begin; band < band_end; ++band) {
      const std::size_t row0 = band * kBand;
      const std::size_t row1 = std::min(shape.ny, row0 + kBand);
      std::vector<double> comp((row1 - row0) * shape.nx, 0.0);
      for (std::uint32_t idx : band_lists[band]) {
        const auto& r = rb[idx];
        const double jlo = std::ceil((r.c.y - r.y_half - shape.origin.y) * inv_h) - 1.0;
        const double jhi = std::floor((r.c.y + r.y_half - shape.origin.y) * inv_h) + 1.0;
        const auto ja = static_cast<std::size_t>(std::max(jlo, static_cast<double>(row0)));
        const auto jb = static_cast<std::size_t>(std::min(jhi, static_cast<double>(row1 - 1)));
        for (std::size_t j = ja; j <= jb; ++j) {
          const double y = shape.origin.y + h * static_cast<double>(j);
          const double dy = y - r.c.y;
          const double disc = r.alpha * s2 - r.inv_major * r.inv_minor * dy * dy;
          if (disc < -1e-12 * r.alpha * s2) continue;
          const double half = std::sqrt(std::max(disc, 0.0)) / r.alpha;
          const double xc = r.c.x - r.beta * dy / r.alpha;
          const double ilo = std::ceil((xc - half - shape.origin.x) * inv_h) - 1.0;
          const double ihi = std::floor((xc + half - shape.origin.x) * inv_h) + 1.0;
          if (ihi < 0.0 || ilo > static_cast<double>(shape.nx - 1)) continue;
          const auto i0 = static_cast<std::size_t>(std::max(ilo, 0.0));
          const auto i1 = static_cast<std::size_t>(std::min(ihi, static_cast<double>(shape.nx - 1)));
          double* row = grid.values.data() + j * shape.nx;
          double* crow = comp.data() + (j - row0) * shape.nx;
          for (std::size_t i = i0; i <= i1; ++i) {
            const Vec2 d{shape.origin.x + h * static_cast<double>(i) - r.c.x, dy};
            const double q = r.quad(d);
            if (q > s2) continue;
            const double x = r.amp * std::exp(-0.5 * q);
            const double t = row[i] + x;
            if (std::abs(row[i]) >= std::abs(x))
              crow[i] += (row[i] - t) + x;
            else
              crow[i] += (x - t) + row[i];
            row[i] = t;
          }
        }
      }
      for (std::size_t j = row0; j < row1; ++j)
        for (std::size_t i = 0; i < shape.nx; ++i)
          grid.values[j * shape.nx + i] += comp[(j - row0) * shape.nx + i];
    }
  });
  return grid;
}

struct FieldMoments {
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;
  /// Undefined (nullopt) for a constant field.
  std::optional<double> skewness;
  std::optional<double> excess_kurtosis;
};

/// Sample mean, unbiased variance and the bias-adjusted skewness (G1) and
/// excess kurtosis (G2).
inline FieldMoments field_moments(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("field_moments: empty input");
  FieldMoments m;
  m.n = values.size();
  const double n = static_cast<double>(m.n);
  CompensatedSum s1;
  for (double v : values) s1.add(v);
  m.mean = s1.value() / n;
  CompensatedSum c2, c3, c4;
  for (double v : values) {
    const double d = v - m.mean;
    c2.add(d * d);
    c3.add(d * d * d);
    c4.add(d * d * d * d);
  }
  const double m2 = c2.value() / n;
  const double m3 = c3.value() / n;
  const double m4 = c4.value() / n;
  m.variance = m.n > 1 ? c2.value() / (n - 1.0) : 0.0;
  if (m2 > 0.0 && m.n > 3) {
    const double g1 = m3 / std::pow(m2, 1.5);
    const double g2 = m4 / (m2 * m2) - 3.0;
    m.skewness = g1 * std::sqrt(n * (n - 1.0)) / (n - 2.0);
    m.excess_kurtosis = ((n + 1.0) * g2 + 6.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0));
  }
  return m;
}

inline FieldMoments field_moments(const FieldGrid& grid) { return field_moments(grid.values); }

}  // namespace batchelor

#endif
