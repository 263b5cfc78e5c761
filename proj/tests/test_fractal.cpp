#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "batchelor/fractal.hpp"

using namespace batchelor;

namespace {

Contour koch(int levels) {
  std::vector<Vec2> pts{{0, 0}, {1, 0}};
  for (int l = 0; l < levels; ++l) {
    std::vector<Vec2> next{pts.front()};
    for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
      const Vec2 a = pts[k], b = pts[k + 1];
      const Vec2 d = (b - a) * (1.0 / 3.0);
      const Vec2 p1 = a + d, p3 = a + d * 2.0;
      const Vec2 peak = p1 + Vec2{0.5 * d.x - std::sqrt(3.0) / 2 * d.y, std::sqrt(3.0) / 2 * d.x + 0.5 * d.y};
      next.insert(next.end(), {p1, peak, p3, b});
    }
    pts = std::move(next);
  }
  Contour c;
  c.vertices = pts;
  return c;
}

Contour circle(double r, std::size_t n) {
  Contour c;
  c.closed = true;
  for (std::size_t k = 0; k < n; ++k)
    c.vertices.push_back({r * std::cos(2 * M_PI * k / n), r * std::sin(2 * M_PI * k / n)});
  return c;
}

Contour line(double len, std::size_t n) {
  Contour c;
  for (std::size_t k = 0; k <= n; ++k) c.vertices.push_back({0.013 + len * k / n, 0.37 + 0.29 * len * k / n});
  return c;
}

}  // namespace

TEST(BoxCounts, HalfUnitSegment) {
  Contour c;
  c.vertices = {{0, 0.25}, {1, 0.25}};
  const auto b = box_counts(c, {0.5});
  ASSERT_EQ(b.n_boxes[0], 2u);
  EXPECT_DOUBLE_EQ(b.masses[0][0], 0.5);
  EXPECT_DOUBLE_EQ(b.masses[0][1], 0.5);
}

TEST(BoxCounts, NormalizedAndMonotone) {
  const Contour c = koch(5);
  const auto eps = epsilon_ladder(1e-3, 0.5);
  const auto b = box_counts(c, eps, {-0.1, -0.1});
  for (std::size_t k = 0; k < eps.size(); ++k) {
    double s = 0;
    for (double p : b.masses[k]) s += p;
    EXPECT_NEAR(s, 1.0, 1e-12);
    if (k > 0) {
      EXPECT_GE(b.n_boxes[k], b.n_boxes[k - 1]);
    }
  }
}

TEST(BoxCounts, CircleCovering) {
  const auto b = box_counts(circle(1.0, 20000), {1e-3});
  const double ratio = b.n_boxes[0] * 1e-3 / (2 * M_PI);
  EXPECT_GE(ratio, 0.9);
  EXPECT_LE(ratio, 1.5);
}

TEST(BoxCounts, OccupancyMatchesVertexSet) {
  // Dense sampling: boxes hit by vertices coincide with boxes carrying arc length.
  const Contour c = line(3.0, 30000);
  const double eps = 0.05;
  const auto b = box_counts(c, {eps});
  std::set<std::pair<long, long>> hit;
  for (Vec2 v : c.vertices) hit.insert({std::lround(std::floor(v.x / eps)), std::lround(std::floor(v.y / eps))});
  EXPECT_EQ(b.n_boxes[0], hit.size());
}

TEST(BoxCounts, RejectsUnsortedScales) {
  EXPECT_THROW(box_counts(line(1, 4), {0.1, 0.2}), std::invalid_argument);
  EXPECT_THROW(box_counts(line(1, 4), {0.1, -0.2}), std::invalid_argument);
}

TEST(Dimension, StraightSegment) {
  const Contour c = line(100.0, 10);
  const auto b = box_counts(c, epsilon_ladder(0.01, 1.0));
  for (double q : {0.0, 1.0, 2.0, 4.0}) EXPECT_NEAR(generalized_dimension(b, q, 0.01, 1.0).D_q, 1.0, 0.02);
  for (const auto& [e, s] : local_slope(b, 0.0)) EXPECT_NEAR(s, 1.0, 0.05) << e;
}

TEST(Dimension, KochCurve) {
  const Contour c = koch(6);
  const auto eps = epsilon_ladder(std::pow(3.0, -5), std::pow(3.0, -1));
  const auto b = box_counts(c, eps, {-0.0123, -0.0456});
  const auto d0 = generalized_dimension(b, 0.0, eps.back(), eps.front());
  EXPECT_NEAR(d0.D_q, std::log(4.0) / std::log(3.0), 0.03);
  const auto d2 = generalized_dimension(b, 2.0, eps.back(), eps.front());
  const auto d4 = generalized_dimension(b, 4.0, eps.back(), eps.front());
  EXPECT_LE(d2.D_q, d0.D_q + 3 * std::hypot(d0.stderr_fit, d2.stderr_fit));
  EXPECT_LE(d4.D_q, d2.D_q + 3 * std::hypot(d2.stderr_fit, d4.stderr_fit));
}

TEST(Dimension, LatticeOriginShift) {
  const Contour c = koch(6);
  const auto eps = epsilon_ladder(std::pow(3.0, -5), std::pow(3.0, -1));
  const Vec2 o{-0.0123, -0.0456};
  const auto a = generalized_dimension(box_counts(c, eps, o), 0.0, eps.back(), eps.front());
  BoxCountCurve shifted;
  shifted.epsilons = eps;
  for (double e : eps) {
    const auto one = box_counts(c, {e}, o + Vec2{e / 2, e / 2});
    shifted.masses.push_back(one.masses[0]);
    shifted.n_boxes.push_back(one.n_boxes[0]);
  }
  const auto b = generalized_dimension(shifted, 0.0, eps.back(), eps.front());
  EXPECT_LT(std::abs(a.D_q - b.D_q), 2 * std::max(a.stderr_fit, b.stderr_fit) + 0.01);
}

TEST(Dimension, CircleLocalSlope) {
  const auto b = box_counts(circle(5.0, 50000), epsilon_ladder(0.005, 0.2));
  for (const auto& [e, s] : local_slope(b, 0.0)) EXPECT_NEAR(s, 1.0, 0.06) << e;
}

TEST(Dimension, DegenerateWindow) {
  const auto b = box_counts(line(10.0, 10), epsilon_ladder(0.1, 1.0));
  EXPECT_THROW(generalized_dimension(b, 0.0, 0.5, 1.0), std::invalid_argument);
  EXPECT_THROW(local_slope(box_counts(line(1, 3), {0.5, 0.2}), 0.0), std::invalid_argument);
}

TEST(Dimension, Ensemble) {
  std::vector<DimensionEstimate> est{{0, 1, 2, 1.5, 0.01, 5}, {0, 1, 2, 1.7, 0.03, 5}};
  const auto e = ensemble_dimension(est);
  EXPECT_DOUBLE_EQ(e.mean, 1.6);
  EXPECT_NEAR(e.spread, 0.1, 1e-12);
  EXPECT_DOUBLE_EQ(e.fit_error, 0.02);
}

TEST(LineFitting, ExactLine) {
  const auto f = fit_line({0, 1, 2, 3}, {1, 3, 5, 7});
  EXPECT_NEAR(f.slope, 2.0, 1e-14);
  EXPECT_NEAR(f.intercept, 1.0, 1e-14);
  EXPECT_NEAR(f.stderr_slope, 0.0, 1e-14);
}
