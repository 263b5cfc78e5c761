#ifndef BATCHELOR_STATS_HPP
#define BATCHELOR_STATS_HPP

// Log-binned PDFs of contour sizes and perimeters and the tail laws fitted to them.
// Lengths are in units of L, logarithms are natural.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "batchelor/fit.hpp"

namespace batchelor {

struct LogHistogram {
  std::vector<double> bin_edges;  // ln(x / L), ascending, n_bins + 1 entries
  std::vector<double> counts;
  std::vector<double> densities;  // per unit ln x, normalized by n_total
  double n_total = 0.0;           // includes samples outside the edges
  double underflow = 0.0, overflow = 0.0;

  std::size_t n_bins() const { return counts.size(); }
  double width(std::size_t k) const { return bin_edges[k + 1] - bin_edges[k]; }
  double center(std::size_t k) const { return 0.5 * (bin_edges[k] + bin_edges[k + 1]); }
  /// Poisson error of densities[k].
  double density_error(std::size_t k) const {
    return n_total > 0 ? std::sqrt(counts[k]) / (n_total * width(k)) : 0.0;
  }

  void normalize() {
    densities.assign(counts.size(), 0.0);
    if (n_total <= 0) return;
    for (std::size_t k = 0; k < counts.size(); ++k) densities[k] = counts[k] / (n_total * width(k));
  }
};

/// Equal-width bins in ln x over [log_lo, log_hi].  Out-of-range samples count
/// towards n_total, so PDFs built on shared edges stay comparable.
inline LogHistogram histogram_log(const std::vector<double>& values, std::size_t n_bins, double log_lo,
                                  double log_hi) {
  if (n_bins < 10) throw std::invalid_argument("histogram_log: need at least 10 bins");
  if (!(log_hi > log_lo)) throw std::invalid_argument("histogram_log: empty range");
  LogHistogram h;
  h.bin_edges.resize(n_bins + 1);
  for (std::size_t k = 0; k <= n_bins; ++k)
    h.bin_edges[k] = log_lo + (log_hi - log_lo) * static_cast<double>(k) / static_cast<double>(n_bins);
  h.counts.assign(n_bins, 0.0);
  const double inv_w = static_cast<double>(n_bins) / (log_hi - log_lo);
  for (double v : values) {
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("histogram_log: non-positive value");
    const double u = std::log(v);
    h.n_total += 1.0;
    if (u < log_lo) {
      h.underflow += 1.0;
    } else if (u > log_hi) {
      h.overflow += 1.0;
    } else {
      const auto k = std::min(static_cast<std::size_t>((u - log_lo) * inv_w), n_bins - 1);
      h.counts[k] += 1.0;
    }
  }
  h.normalize();
  return h;
}

/// Range taken from the data; a degenerate sample gets a unit-wide range around it.
inline LogHistogram histogram_log(const std::vector<double>& values, std::size_t n_bins) {
  if (values.empty()) throw std::invalid_argument("histogram_log: empty sample");
  double lo = INFINITY, hi = -INFINITY;
  for (double v : values) {
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("histogram_log: non-positive value");
    lo = std::min(lo, std::log(v));
    hi = std::max(hi, std::log(v));
  }
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  return histogram_log(values, n_bins, lo, hi);
}

/// Sum of two histograms on identical edges.
inline LogHistogram merge(const LogHistogram& a, const LogHistogram& b) {
  if (a.bin_edges != b.bin_edges) throw std::invalid_argument("merge: different bin edges");
  LogHistogram m = a;
  for (std::size_t k = 0; k < m.counts.size(); ++k) m.counts[k] += b.counts[k];
  m.n_total += b.n_total;
  m.underflow += b.underflow;
  m.overflow += b.overflow;
  m.normalize();
  return m;
}

enum class TailKind { PowerLawLeft, PowerLawRight, LogNormalRight, PoissonPrediction };

inline std::string to_string(TailKind k) {
  switch (k) {
    case TailKind::PowerLawLeft: return "power-law-left";
    case TailKind::PowerLawRight: return "power-law-right";
    case TailKind::LogNormalRight: return "log-normal-right";
    case TailKind::PoissonPrediction: return "poisson-prediction";
  }
  return "unknown";
}

struct TailFit {
  TailKind kind = TailKind::PowerLawLeft;
  double exponent = 0.0;  // PDF(x) ~ x^exponent
  double mu = 0.0, sigma = 0.0;  // log-normal parameters of ln x
  double x_lo = 0.0, x_hi = 0.0;
  double stderr_fit = 0.0;
  double residual = 0.0;  // count-weighted RMS residual of ln density
  double n_counts = 0.0;
  std::size_t n_bins = 0;
};

namespace detail {

struct TailData {
  std::vector<double> u, y, w;
  double counts = 0.0;
};

inline TailData tail_data(const LogHistogram& h, double x_lo, double x_hi, double min_counts) {
  if (!(x_lo > 0.0) || !(x_hi > x_lo)) throw std::invalid_argument("tail fit: bad window");
  TailData d;
  const double ulo = std::log(x_lo), uhi = std::log(x_hi);
  for (std::size_t k = 0; k < h.n_bins(); ++k) {
    const double c = h.center(k);
    if (c < ulo || c > uhi || h.counts[k] <= 0.0) continue;
    d.u.push_back(c);
    d.y.push_back(std::log(h.densities[k]));
    // Var(ln density) ~ 1 / count.
    d.w.push_back(h.counts[k]);
    d.counts += h.counts[k];
  }
  if (d.counts < min_counts)
    throw insufficient_data("tail fit: " + std::to_string(static_cast<long long>(d.counts)) +
                            " counts in window, need " + std::to_string(static_cast<long long>(min_counts)));
  if (d.u.size() < 3) throw insufficient_data("tail fit: fewer than 3 occupied bins in window");
  return d;
}

inline TailFit power_law(const LogHistogram& h, double x_lo, double x_hi, double min_counts, TailKind kind) {
  const TailData d = tail_data(h, x_lo, x_hi, min_counts);
  const LineFit f = fit_line(d.u, d.y, d.w);
  TailFit t;
  t.kind = kind;
  // The density per unit ln x of PDF(x) ~ x^a goes like x^(a+1).
  t.exponent = f.slope - 1.0;
  t.stderr_fit = f.stderr_slope;
  t.residual = f.residual_rms;
  t.x_lo = x_lo;
  t.x_hi = x_hi;
  t.n_counts = d.counts;
  t.n_bins = d.u.size();
  return t;
}

}  // namespace detail

inline constexpr double kMinTailCounts = 50.0;

inline TailFit fit_left_tail(const LogHistogram& h, double x_lo, double x_hi,
                             double min_counts = kMinTailCounts) {
  return detail::power_law(h, x_lo, x_hi, min_counts, TailKind::PowerLawLeft);
}

/// PowerLawRight fits a line to ln density, LogNormalRight a parabola
/// ln rho(u) = c - (u - mu)^2 / (2 sigma^2) with u = ln x.
inline TailFit fit_right_tail(const LogHistogram& h, double x_lo, double x_hi, TailKind kind,
                              double min_counts = kMinTailCounts) {
  if (kind == TailKind::PowerLawRight) return detail::power_law(h, x_lo, x_hi, min_counts, kind);
  if (kind != TailKind::LogNormalRight) throw std::invalid_argument("fit_right_tail: unsupported kind");
  const detail::TailData d = detail::tail_data(h, x_lo, x_hi, min_counts);
  const QuadraticFit q = fit_quadratic(d.u, d.y, d.w);
  TailFit t;
  t.kind = kind;
  t.x_lo = x_lo;
  t.x_hi = x_hi;
  t.n_counts = d.counts;
  t.n_bins = d.u.size();
  t.residual = q.residual_rms;
  if (q.c[2] < 0.0) {
    t.sigma = std::sqrt(-0.5 / q.c[2]);
    t.mu = -q.c[1] / (2.0 * q.c[2]);
  } else {
    t.sigma = INFINITY;
    t.mu = NAN;
  }
  t.stderr_fit = q.stderr_c[2];
  return t;
}

/// Exponent of the naive size tail PDF(R) ~ R^(-1 - nu/lambda).
inline double poisson_prediction(double nu_over_lambda) {
  if (!(nu_over_lambda > 0.0)) throw std::invalid_argument("poisson_prediction: ratio must be > 0");
  return -1.0 - nu_over_lambda;
}

/// The naive tail overlaid on the histogram: slope fixed, intercept fitted with
/// the same weights as the other tail fits, so residuals are comparable.
inline TailFit fit_poisson_overlay(const LogHistogram& h, double nu_over_lambda, double x_lo, double x_hi,
                                   double min_counts = kMinTailCounts) {
  const double a = poisson_prediction(nu_over_lambda);
  const detail::TailData d = detail::tail_data(h, x_lo, x_hi, min_counts);
  const double slope = a + 1.0;
  double sw = 0, sr = 0;
  for (std::size_t i = 0; i < d.u.size(); ++i) {
    sw += d.w[i];
    sr += d.w[i] * (d.y[i] - slope * d.u[i]);
  }
  const double c = sr / sw;
  double ssr = 0;
  for (std::size_t i = 0; i < d.u.size(); ++i) {
    const double r = d.y[i] - slope * d.u[i] - c;
    ssr += d.w[i] * r * r;
  }
  TailFit t;
  t.kind = TailKind::PoissonPrediction;
  t.exponent = a;
  t.x_lo = x_lo;
  t.x_hi = x_hi;
  t.residual = std::sqrt(ssr / sw);
  t.n_counts = d.counts;
  t.n_bins = d.u.size();
  return t;
}

struct ModeEstimate {
  double x = 0.0;  // location in units of L
  std::size_t bin = 0;
  bool multimodal = false;
  std::optional<double> secondary_x;
};

/// Parabolic interpolation around the highest bin above x_mask.  Flags a
/// second peak of at least half the height separated by a real dip.
inline ModeEstimate mode_location(const LogHistogram& h, double x_mask = 0.0) {
  const std::size_t n = h.n_bins();
  const double umask = x_mask > 0.0 ? std::log(x_mask) : -INFINITY;
  std::size_t best = n;
  for (std::size_t k = 0; k < n; ++k) {
    if (h.center(k) < umask || h.counts[k] <= 0.0) continue;
    if (best == n || h.densities[k] > h.densities[best]) best = k;
  }
  if (best == n) throw insufficient_data("mode_location: no samples above the mask");
  ModeEstimate m;
  m.bin = best;
  double u = h.center(best);
  if (best > 0 && best + 1 < n) {
    const double a = h.densities[best - 1], b = h.densities[best], c = h.densities[best + 1];
    const double den = a - 2.0 * b + c;
    if (den < 0.0) u += 0.5 * h.width(best) * (a - c) / den;
  }
  m.x = std::exp(u);
  // Secondary maximum on the 3-bin smoothed density, over all bins.
  std::vector<double> s(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double acc = 0;
    int cnt = 0;
    for (std::size_t j = (k == 0 ? 0 : k - 1); j <= std::min(n - 1, k + 1); ++j, ++cnt) acc += h.densities[j];
    s[k] = acc / cnt;
  }
  std::size_t main = 0;
  for (std::size_t k = 0; k < n; ++k)
    if (s[k] > s[main]) main = k;
  for (std::size_t k = 1; k + 1 < n; ++k) {
    if (k == main || !(s[k] > s[k - 1] && s[k] >= s[k + 1]) || s[k] < 0.5 * s[main]) continue;
    const std::size_t a = std::min(k, main), b = std::max(k, main);
    const double dip = *std::min_element(s.begin() + a, s.begin() + b + 1);
    if (dip < 0.8 * s[k]) {
      m.multimodal = true;
      m.secondary_x = std::exp(h.center(k));
      break;
    }
  }
  return m;
}

struct HistogramComparison {
  std::size_t bins_compared = 0;
  std::size_t bins_beyond = 0;
  double max_abs_z = 0.0;
  double chi2 = 0.0;
};

/// Bin-wise z-scores of two PDFs on identical edges for bins centered above x_min.
inline HistogramComparison compare_histograms(const LogHistogram& a, const LogHistogram& b, double x_min,
                                              double n_sigma = 3.0) {
  if (a.bin_edges != b.bin_edges) throw std::invalid_argument("compare_histograms: different bin edges");
  HistogramComparison out;
  const double umin = std::log(x_min);
  for (std::size_t k = 0; k < a.n_bins(); ++k) {
    if (a.center(k) < umin || (a.counts[k] == 0 && b.counts[k] == 0)) continue;
    const double ea = a.density_error(k), eb = b.density_error(k);
    // An empty bin still carries the error of one count.
    const double fa = a.counts[k] > 0 ? ea : 1.0 / (a.n_total * a.width(k));
    const double fb = b.counts[k] > 0 ? eb : 1.0 / (b.n_total * b.width(k));
    const double z = (a.densities[k] - b.densities[k]) / std::hypot(fa, fb);
    ++out.bins_compared;
    out.chi2 += z * z;
    out.max_abs_z = std::max(out.max_abs_z, std::abs(z));
    if (std::abs(z) > n_sigma) ++out.bins_beyond;
  }
  return out;
}

}  // namespace batchelor

#endif
