#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "batchelor/loewner.hpp"

using namespace batchelor;

namespace {

ChordalCurve vertical(double x, double H, std::size_t n) {
  ChordalCurve c;
  for (std::size_t k = 0; k <= n; ++k) c.points.push_back({x, H * k / n});
  return c;
}

double rms_distance(const ChordalCurve& a, const ChordalCurve& b) {
  double s = 0;
  for (std::size_t k = 0; k < a.points.size(); ++k) s += norm2(a.points[k] - b.points[k]);
  return std::sqrt(s / a.points.size());
}

double diameter_of(const ChordalCurve& c) { return diameter(c.points); }

bool segments_cross(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
  const double d1 = cross(b - a, c - a), d2 = cross(b - a, d - a);
  const double d3 = cross(d - c, a - c), d4 = cross(d - c, b - c);
  return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0));
}

Contour smooth_loop(std::size_t n) {
  Contour c;
  c.closed = true;
  for (std::size_t k = 0; k < n; ++k) {
    const double a = 2 * M_PI * k / n;
    const double r = 5.0 + 1.0 * std::cos(3 * a) + 0.5 * std::sin(2 * a);
    c.vertices.push_back({r * std::cos(a), 0.7 * r * std::sin(a)});
  }
  return c;
}

}  // namespace

TEST(Unzip, VerticalSlit) {
  const auto d = unzip(vertical(0.0, 3.0, 200));
  for (double x : d.xi) EXPECT_NEAR(x, 0.0, 1e-12);
  EXPECT_NEAR(d.t_max(), 9.0 / 4.0, 1e-12);
}

TEST(Unzip, RejectsInvalidCurves) {
  ChordalCurve c;
  c.points = {{0, 0.1}, {0, 1}};
  EXPECT_THROW(unzip(c), std::invalid_argument);
  c.points = {{0, 0}, {0, 1}, {0, 1}};
  EXPECT_THROW(unzip(c), std::invalid_argument);
  c.points = {{0, 0}, {0, -1}};
  EXPECT_THROW(unzip(c), std::invalid_argument);
}

TEST(Zip, ZeroDrivingGivesVerticalSegment) {
  DrivingFunction d;
  for (int k = 0; k <= 100; ++k) {
    d.t.push_back(0.04 * k);
    d.xi.push_back(0.0);
  }
  const auto c = zip(d);
  EXPECT_NEAR(c.points.back().x, 0.0, 1e-12);
  EXPECT_NEAR(c.points.back().y, 2.0 * std::sqrt(4.0), 1e-6);
}

TEST(Zip, ConstantDrivingRootedAtConstant) {
  DrivingFunction d;
  for (int k = 0; k <= 50; ++k) {
    d.t.push_back(0.1 * k);
    d.xi.push_back(1.75);
  }
  const auto c = zip(d);
  for (Vec2 p : c.points) EXPECT_NEAR(p.x, 1.75, 1e-12);
  const auto back = unzip(c);
  for (double x : back.xi) EXPECT_NEAR(x, 1.75, 1e-6);
}

TEST(Zip, RejectsBadDriving) {
  DrivingFunction d{{0.0, 1.0, 1.0}, {0.0, 0.0, 0.0}};
  EXPECT_THROW(zip(d), std::invalid_argument);
}

TEST(Zipper, BrownianRoundTrip) {
  const auto d = brownian_driving(6.0, 1.0, 10000, 1);
  const auto c = zip(d);
  const auto back = unzip(c);
  ASSERT_EQ(back.size(), d.size());
  double s = 0;
  for (std::size_t k = 0; k < d.size(); ++k) s += (back.xi[k] - d.xi[k]) * (back.xi[k] - d.xi[k]);
  EXPECT_LT(std::sqrt(s / d.size()), 1e-3 * std::sqrt(6.0 * 1.0));
  for (std::size_t k = 0; k < d.size(); ++k) ASSERT_NEAR(back.t[k], d.t[k], 1e-9);
}

TEST(Zipper, CurveRoundTrip) {
  ChordalOptions opt;
  opt.min_perimeter = 1.0;
  opt.resample_step = 0.05;
  const auto curve = prepare_chordal(smooth_loop(4000), opt);
  const auto again = zip(unzip(curve));
  ASSERT_EQ(again.points.size(), curve.points.size());
  EXPECT_LT(rms_distance(curve, again), 1e-4 * diameter_of(curve));
}

TEST(Zipper, SimpleTraceBelowFour) {
  const auto c = zip(brownian_driving(8.0 / 3.0, 1.0, 800, 2));
  std::size_t crossings = 0;
  for (std::size_t i = 0; i + 1 < c.points.size(); ++i)
    for (std::size_t j = i + 2; j + 1 < c.points.size(); ++j)
      if (segments_cross(c.points[i], c.points[i + 1], c.points[j], c.points[j + 1])) ++crossings;
  EXPECT_EQ(crossings, 0u);
}

TEST(Zipper, CapacityAdditivity) {
  const auto curve = zip(brownian_driving(4.0, 2.0, 600, 3));
  const double whole = unzip(curve).t_max();
  for (std::size_t split : {1u, 150u, 599u}) {
    const auto first = unzip_prefix(curve, split);
    const double rest = unzip(first.remainder).t_max();
    EXPECT_NEAR(first.driving.t_max() + rest, whole, 1e-8 * whole);
  }
}

TEST(Zipper, ReflectionNegatesDriving) {
  const auto curve = zip(brownian_driving(3.0, 1.0, 400, 4));
  const auto mirrored = rescale_curve(curve, 1.0, 1.0);
  ChordalCurve m = mirrored;
  for (Vec2& p : m.points) p.x = -p.x;
  const auto a = unzip(curve), b = unzip(m);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a.xi[k], -b.xi[k]);
    EXPECT_EQ(a.t[k], b.t[k]);
  }
}

TEST(Zipper, ScalingCovariance) {
  const auto curve = zip(brownian_driving(5.0, 1.0, 400, 5));
  const double s = 2.5;
  const auto a = unzip(curve), b = unzip(rescale_curve(curve, s, s));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_NEAR(b.t[k], s * s * a.t[k], 1e-9 * s * s * a.t_max());
    EXPECT_NEAR(b.xi[k], s * a.xi[k], 1e-3);
  }
}

TEST(Rescale, IdentityAndSlitCapacity) {
  const auto slit = vertical(0.0, 2.0, 50);
  EXPECT_EQ(rescale_curve(slit, 1, 1).points, slit.points);
  EXPECT_NEAR(unzip(rescale_curve(slit, 1, 2)).t_max(), 4.0 * unzip(slit).t_max(), 1e-12);
  EXPECT_THROW(rescale_curve(slit, 0, 1), std::invalid_argument);
}

TEST(Prepare, SemicircleLoop) {
  Contour c;
  c.closed = true;
  // Upper unit semicircle closed by its diameter, lifted so the cut lands at (-1, 0).
  for (int k = 0; k <= 100; ++k) c.vertices.push_back({std::cos(M_PI * k / 100), std::sin(M_PI * k / 100)});
  for (int k = 1; k < 20; ++k) c.vertices.push_back({-1.0 + 2.0 * k / 20, 0.0});
  ChordalOptions opt;
  opt.min_perimeter = 1.0;
  const auto ch = prepare_chordal(c, opt);
  EXPECT_EQ(ch.points[0], (Vec2{0, 0}));
  for (Vec2 p : ch.points) EXPECT_GE(p.y, 0.0);
  // Counterclockwise from (-1, 0): along the diameter first.
  EXPECT_GT(ch.points[1].x, 0.0);
  EXPECT_EQ(ch.points[1].y, 0.0);
  double len = 0;
  for (std::size_t k = 0; k + 1 < ch.points.size(); ++k) len += norm(ch.points[k + 1] - ch.points[k]);
  EXPECT_NEAR(len, 0.95 * perimeter(c), 1e-9);
}

TEST(Prepare, Rejections) {
  Contour open = smooth_loop(100);
  open.closed = false;
  open.touches_boundary = true;
  EXPECT_THROW(prepare_chordal(open), std::invalid_argument);
  Contour tiny;
  tiny.closed = true;
  for (int k = 0; k < 50; ++k) tiny.vertices.push_back({std::cos(0.04 * M_PI * k), std::sin(0.04 * M_PI * k)});
  EXPECT_THROW(prepare_chordal(tiny), std::invalid_argument);
}

TEST(Prepare, DecimatesLongCurves) {
  ChordalOptions opt;
  opt.min_perimeter = 1.0;
  opt.max_points = 500;
  const auto ch = prepare_chordal(smooth_loop(20000), opt);
  EXPECT_LE(ch.points.size(), 501u);
  EXPECT_GE(ch.points.size(), 490u);
}

TEST(Diffusivity, BrownianEnsemble) {
  std::vector<DrivingFunction> ds;
  for (int i = 0; i < 100; ++i) ds.push_back(brownian_driving(6.0, 1.0, 10000, 100 + i));
  const auto e = effective_diffusivity(ds, 0.0, 0.25);
  EXPECT_NEAR(e.kappa, 6.0, 0.6);
  EXPECT_LT(e.kappa_error, 0.6);
  EXPECT_EQ(e.n_contours, 100u);
  const auto ens = effective_diffusivity(ds, 0.1, 1.0, DiffusivityMethod::Ensemble);
  EXPECT_NEAR(ens.kappa, 6.0, 3.0 * ens.kappa_error + 0.3);
  ASSERT_FALSE(ens.curve_xi2_over_t.empty());
  EXPECT_NEAR(ens.curve_xi2_over_t.back(), 6.0, 2.0);
}

TEST(Diffusivity, ZeroDriving) {
  std::vector<DrivingFunction> ds(3, DrivingFunction{{0, 0.5, 1.0}, {0, 0, 0}});
  EXPECT_EQ(effective_diffusivity(ds, 0.0, 1.0).kappa, 0.0);
  EXPECT_EQ(effective_diffusivity(ds, 0.1, 1.0, DiffusivityMethod::Ensemble).kappa, 0.0);
}

TEST(Diffusivity, InsufficientEnsemble) {
  std::vector<DrivingFunction> ds{brownian_driving(6.0, 1.0, 100, 1), brownian_driving(6.0, 0.2, 100, 2)};
  EXPECT_THROW(effective_diffusivity(ds, 0.0, 0.5), insufficient_data);
}

TEST(Diffusivity, SleChain) {
  std::vector<DrivingFunction> ds;
  for (int i = 0; i < 30; ++i) ds.push_back(unzip(zip(brownian_driving(6.0, 1.0, 800, 300 + i))));
  const auto e = effective_diffusivity(ds, 0.0, 0.25);
  EXPECT_NEAR(e.kappa, 6.0, 0.15 * 6.0);
}
