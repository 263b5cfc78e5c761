#ifndef BATCHELOR_FIT_HPP
#define BATCHELOR_FIT_HPP

// Small least-squares helpers shared by the dimension and tail fits.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

namespace batchelor {

/// Raised when a fit or estimate has too few samples to work with.
struct insufficient_data : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LineFit {
  double slope = 0.0, intercept = 0.0, stderr_slope = 0.0, residual_rms = 0.0;
  std::size_t n = 0;
};

/// Ordinary (w empty) or weighted least squares for y = slope x + intercept.
/// residual_rms is the weight-averaged RMS residual.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y,
                        const std::vector<double>& w = {}) {
  const std::size_t n = x.size();
  if (n != y.size() || (!w.empty() && w.size() != n)) throw std::invalid_argument("fit_line: size mismatch");
  if (n < 2) throw std::invalid_argument("fit_line: fewer than 2 points");
  auto weight = [&](std::size_t i) { return w.empty() ? 1.0 : w[i]; };
  double sw = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sw += weight(i);
    sx += weight(i) * x[i];
    sy += weight(i) * y[i];
  }
  const double mx = sx / sw, my = sy / sw;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += weight(i) * (x[i] - mx) * (x[i] - mx);
    sxy += weight(i) * (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("fit_line: zero variance in abscissa");
  LineFit f;
  f.n = n;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ssr = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - (f.slope * x[i] + f.intercept);
    ssr += weight(i) * r * r;
  }
  f.residual_rms = std::sqrt(ssr / sw);
  // Scale-free error: residual variance estimated from the fit itself.
  f.stderr_slope = n > 2 ? std::sqrt(ssr / static_cast<double>(n - 2) / sxx) : 0.0;
  return f;
}

struct QuadraticFit {
  // y = c0 + c1 x + c2 x^2
  std::array<double, 3> c{};
  std::array<double, 3> stderr_c{};
  double residual_rms = 0.0;
  std::size_t n = 0;
};

inline QuadraticFit fit_quadratic(const std::vector<double>& x, const std::vector<double>& y,
                                  const std::vector<double>& w = {}) {
  const std::size_t n = x.size();
  if (n != y.size() || (!w.empty() && w.size() != n)) throw std::invalid_argument("fit_quadratic: size mismatch");
  if (n < 3) throw std::invalid_argument("fit_quadratic: fewer than 3 points");
  auto weight = [&](std::size_t i) { return w.empty() ? 1.0 : w[i]; };
  // Center and scale the abscissa for conditioning.
  double sw = 0, sx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sw += weight(i);
    sx += weight(i) * x[i];
  }
  const double m = sx / sw;
  double spread = 0;
  for (std::size_t i = 0; i < n; ++i) spread = std::max(spread, std::abs(x[i] - m));
  if (!(spread > 0.0)) throw std::invalid_argument("fit_quadratic: zero variance in abscissa");
  double a[3][4] = {};
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (x[i] - m) / spread;
    const double p[3] = {1.0, u, u * u};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) a[r][c] += weight(i) * p[r] * p[c];
      a[r][3] += weight(i) * p[r] * y[i];
    }
  }
  double inv[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) < 1e-300) throw std::invalid_argument("fit_quadratic: singular system");
    for (int c = 0; c < 4; ++c) std::swap(a[col][c], a[piv][c]);
    for (int c = 0; c < 3; ++c) std::swap(inv[col][c], inv[piv][c]);
    const double d = a[col][col];
    for (int c = 0; c < 4; ++c) a[col][c] /= d;
    for (int c = 0; c < 3; ++c) inv[col][c] /= d;
    for (int r = 0; r < 3; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      for (int c = 0; c < 4; ++c) a[r][c] -= f * a[col][c];
      for (int c = 0; c < 3; ++c) inv[r][c] -= f * inv[col][c];
    }
  }
  const double b0 = a[0][3], b1 = a[1][3], b2 = a[2][3];
  double ssr = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (x[i] - m) / spread;
    const double r = y[i] - (b0 + b1 * u + b2 * u * u);
    ssr += weight(i) * r * r;
  }
  QuadraticFit f;
  f.n = n;
  f.residual_rms = std::sqrt(ssr / sw);
  // Back to the original abscissa: u = (x - m)/s.
  const double s = spread;
  f.c = {b0 - b1 * m / s + b2 * m * m / (s * s), b1 / s - 2.0 * b2 * m / (s * s), b2 / (s * s)};
  if (n > 3) {
    const double sigma2 = ssr / static_cast<double>(n - 3);
    const double t[3][3] = {{1.0, -m / s, m * m / (s * s)}, {0.0, 1.0 / s, -2.0 * m / (s * s)},
                            {0.0, 0.0, 1.0 / (s * s)}};
    for (int r = 0; r < 3; ++r) {
      double v = 0.0;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) v += t[r][i] * inv[i][j] * t[r][j];
      f.stderr_c[r] = std::sqrt(std::max(sigma2 * v, 0.0));
    }
  }
  return f;
}

}  // namespace batchelor

#endif
