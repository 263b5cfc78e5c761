#ifndef BATCHELOR_LINALG_HPP
#define BATCHELOR_LINALG_HPP

// Small fixed-size 2d algebra used throughout the library.
//
// Long-lived Lagrangian maps become extremely anisotropic (stretch factors of
// e^20 and beyond), so the two quantities that matter most, the evolution
// operator W and the blob covariance I, are kept in factored form: a rotation
// pair plus singular values.  Plain Mat2 is only used for one-step quantities.

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace batchelor {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
  constexpr Vec2 operator-() const { return {-x, -y}; }
  constexpr Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  constexpr bool operator==(const Vec2&) const = default;
};

constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
constexpr double norm2(Vec2 a) { return dot(a, a); }

/// Row-major 2x2 matrix [[a, b], [c, d]].
struct Mat2 {
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0;

  static constexpr Mat2 identity() { return {1.0, 0.0, 0.0, 1.0}; }
  static Mat2 rotation(double angle) {
    const double cs = std::cos(angle), sn = std::sin(angle);
    return {cs, -sn, sn, cs};
  }

  constexpr Vec2 operator*(Vec2 v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }
  constexpr Mat2 operator*(const Mat2& m) const {
    return {a * m.a + b * m.c, a * m.b + b * m.d, c * m.a + d * m.c, c * m.b + d * m.d};
  }
  constexpr Mat2 operator*(double s) const { return {a * s, b * s, c * s, d * s}; }
  constexpr Mat2 operator+(const Mat2& m) const { return {a + m.a, b + m.b, c + m.c, d + m.d}; }
  constexpr Mat2 operator-(const Mat2& m) const { return {a - m.a, b - m.b, c - m.c, d - m.d}; }
  constexpr Mat2 transposed() const { return {a, c, b, d}; }
  constexpr double det() const { return a * d - b * c; }
  constexpr double trace() const { return a + d; }
  bool finite() const {
    return std::isfinite(a) && std::isfinite(b) && std::isfinite(c) && std::isfinite(d);
  }
  constexpr bool operator==(const Mat2&) const = default;
};

inline double max_abs_diff(const Mat2& x, const Mat2& y) {
  return std::max({std::abs(x.a - y.a), std::abs(x.b - y.b), std::abs(x.c - y.c),
                   std::abs(x.d - y.d)});
}

/// exp(A) for traceless A.  Uses A^2 = (a^2 + bc) 1, so
/// exp(A) = C(delta) 1 + S(delta) A with C = cosh(sqrt(delta)), S = sinh(sqrt(delta))/sqrt(delta)
/// continued analytically to delta < 0.
inline Mat2 expm_traceless(const Mat2& m) {
  const double delta = m.a * m.a + m.b * m.c;
  double cpart = 0.0, spart = 0.0;
  if (std::abs(delta) < 1e-2) {
    // Taylor series in delta; truncation error below 1e-20.
    double term_c = 1.0, term_s = 1.0;
    cpart = 1.0;
    spart = 1.0;
    for (int n = 1; n <= 7; ++n) {
      term_c *= delta / ((2.0 * n - 1.0) * (2.0 * n));
      term_s *= delta / ((2.0 * n) * (2.0 * n + 1.0));
      cpart += term_c;
      spart += term_s;
    }
  } else if (delta > 0.0) {
    const double s = std::sqrt(delta);
    cpart = std::cosh(s);
    spart = std::sinh(s) / s;
  } else {
    const double s = std::sqrt(-delta);
    cpart = std::cos(s);
    spart = std::sin(s) / s;
  }
  return {cpart + spart * m.a, spart * m.b, spart * m.c, cpart - spart * m.a};
}

/// M = R(left) diag(s1, s2) R(right), s1 >= |s2|.  Only s1 and the angles are
/// computed without cancellation; callers that know det(M) analytically should
/// recover the small singular value as det / s1.
struct Svd2 {
  double left = 0.0;
  double s1 = 0.0;
  double s2 = 0.0;
  double right = 0.0;
};

inline Svd2 svd2(const Mat2& m) {
  const double e = 0.5 * (m.a + m.d);
  const double f = 0.5 * (m.a - m.d);
  const double g = 0.5 * (m.c + m.b);
  const double h = 0.5 * (m.c - m.b);
  const double q = std::hypot(e, h);
  const double r = std::hypot(f, g);
  const double a1 = std::atan2(g, f);
  const double a2 = std::atan2(h, e);
  return {0.5 * (a2 + a1), q + r, q - r, 0.5 * (a2 - a1)};
}

/// Symmetric 2x2 matrix [[xx, xy], [xy, yy]].
struct Sym2 {
  double xx = 0.0, xy = 0.0, yy = 0.0;
  constexpr double det() const { return xx * yy - xy * xy; }
  constexpr double quad(Vec2 v) const { return xx * v.x * v.x + 2.0 * xy * v.x * v.y + yy * v.y * v.y; }
  constexpr Mat2 matrix() const { return {xx, xy, xy, yy}; }
};

/// Unimodular map W = R(left) diag(e^stretch, e^-stretch) R(right).
/// det W = 1 holds structurally, independent of how large the stretch becomes.
class UnimodularMap {
 public:
  UnimodularMap() = default;
  UnimodularMap(double left, double stretch, double right)
      : left_(left), stretch_(stretch), right_(right) {}

  double left_angle() const { return left_; }
  double log_stretch() const { return stretch_; }
  double right_angle() const { return right_; }

  Mat2 matrix() const {
    return Mat2::rotation(left_) *
           Mat2{std::exp(stretch_), 0.0, 0.0, std::exp(-stretch_)} *
           Mat2::rotation(right_);
  }

  Vec2 apply(Vec2 v) const {
    const Vec2 r = Mat2::rotation(right_) * v;
    return Mat2::rotation(left_) * Vec2{r.x * std::exp(stretch_), r.y * std::exp(-stretch_)};
  }

  Vec2 inverse_apply(Vec2 v) const {
    const Vec2 r = Mat2::rotation(-left_) * v;
    return Mat2::rotation(-right_) * Vec2{r.x * std::exp(-stretch_), r.y * std::exp(stretch_)};
  }

  /// log |W e| for unit e, evaluated without forming e^stretch.
  double log_norm_of(Vec2 unit) const {
    const Vec2 r = Mat2::rotation(right_) * unit;
    return stretch_ + 0.5 * std::log(r.x * r.x + std::exp(-4.0 * stretch_) * r.y * r.y);
  }

  /// W <- E W for det E = 1.
  void left_multiply(const Mat2& e) {
    const double shrink = std::exp(-2.0 * stretch_);
    const double cs = std::cos(left_), sn = std::sin(left_);
    const Mat2 b{(e.a * cs + e.b * sn), (e.a * -sn + e.b * cs) * shrink,
                 (e.c * cs + e.d * sn), (e.c * -sn + e.d * cs) * shrink};
    const Svd2 s = svd2(b);
    left_ = s.left;
    stretch_ += std::log(s.s1);
    right_ = s.right + right_;
  }

 private:
  double left_ = 0.0;
  double stretch_ = 0.0;
  double right_ = 0.0;
};

/// Symmetric positive definite I = R(angle) diag(major, minor) R(angle)^T.
/// det I = major * minor stays accurate for condition numbers far beyond 1e16.
class Covariance {
 public:
  Covariance() = default;
  Covariance(double angle, double major, double minor)
      : angle_(angle), major_(major), minor_(minor) {}

  static Covariance identity() { return {0.0, 1.0, 1.0}; }

  double angle() const { return angle_; }
  double major() const { return major_; }
  double minor() const { return minor_; }
  double det() const { return major_ * minor_; }
  Vec2 major_axis() const { return {std::cos(angle_), std::sin(angle_)}; }

  Sym2 matrix() const {
    const double cs = std::cos(angle_), sn = std::sin(angle_);
    return {major_ * cs * cs + minor_ * sn * sn, (major_ - minor_) * cs * sn,
            major_ * sn * sn + minor_ * cs * cs};
  }

  /// v^T I^{-1} v.
  double inverse_quad(Vec2 v) const {
    const Vec2 u = major_axis();
    const double p = dot(v, u);
    const double q = cross(u, v);
    return p * p / major_ + q * q / minor_;
  }

  /// I <- E I E^T for det E = 1.
  void congruence(const Mat2& e) {
    const double cs = std::cos(angle_), sn = std::sin(angle_);
    const double ra = std::sqrt(major_), rb = std::sqrt(minor_);
    const Mat2 b{(e.a * cs + e.b * sn) * ra, (e.a * -sn + e.b * cs) * rb,
                 (e.c * cs + e.d * sn) * ra, (e.c * -sn + e.d * cs) * rb};
    const Svd2 s = svd2(b);
    const double small = ra * rb / s.s1;
    angle_ = s.left;
    major_ = s.s1 * s.s1;
    minor_ = small * small;
  }

  /// I <- I + c 1 (eigenvectors unchanged).
  void add_isotropic(double c) {
    major_ += c;
    minor_ += c;
  }

 private:
  double angle_ = 0.0;
  double major_ = 1.0;
  double minor_ = 1.0;
};

}  // namespace batchelor

#endif
