#include <gtest/gtest.h>

#include <array>
#include <algorithm>
#include <cmath>
#include <random>

#include "batchelor/contour.hpp"

using namespace batchelor;

namespace {

FieldGrid make_grid(std::size_t nx, std::size_t ny, double h, Vec2 origin) {
  return FieldGrid(GridShape{origin, h, nx, ny});
}

FieldGrid random_grid(std::size_t n, std::uint64_t seed) {
  FieldGrid g = make_grid(n, n, 1.0, {0, 0});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  for (double& v : g.values) v = d(rng);
  return g;
}

Contour polygon(std::size_t n, double r) {
  Contour c;
  c.closed = true;
  for (std::size_t k = 0; k < n; ++k) {
    const double a = 2.0 * M_PI * k / n;
    c.vertices.push_back({r * std::cos(a), r * std::sin(a)});
  }
  return c;
}

FieldGrid rotate90(const FieldGrid& g) {
  // (i, j) -> (ny-1-j, i): content rotated counterclockwise about the origin pixel frame.
  FieldGrid r = make_grid(g.ny, g.nx, g.pixel_size, {0, 0});
  for (std::size_t j = 0; j < g.ny; ++j)
    for (std::size_t i = 0; i < g.nx; ++i) r.at(g.ny - 1 - j, i) = g.at(i, j);
  return r;
}

}  // namespace

TEST(Isolines, SingleCircle) {
  const double h = 0.05, r0 = 2.0;
  FieldGrid g = make_grid(161, 161, h, {-4, -4});
  for (std::size_t j = 0; j < g.ny; ++j)
    for (std::size_t i = 0; i < g.nx; ++i) {
      const Vec2 x = g.pixel_center(i, j);
      g.at(i, j) = std::exp(-0.5 * norm2(x)) - std::exp(-0.5 * r0 * r0);
    }
  const auto cs = extract_isolines(g, 0.0);
  ASSERT_EQ(cs.size(), 1u);
  EXPECT_TRUE(cs[0].closed);
  EXPECT_FALSE(cs[0].touches_boundary);
  for (Vec2 v : cs[0].vertices) EXPECT_NEAR(norm(v), r0, h);
  EXPECT_NEAR(perimeter(cs[0]), 2 * M_PI * r0, 1e-2);
  EXPECT_NEAR(mean_radius(cs[0]), r0, 1e-3);
  EXPECT_NEAR(gyration_radius(cs[0]), r0, 1e-3);
}

TEST(Isolines, HighSideOnTheLeft) {
  FieldGrid g = make_grid(121, 121, 0.05, {-3, -3});
  for (std::size_t j = 0; j < g.ny; ++j)
    for (std::size_t i = 0; i < g.nx; ++i) {
      const Vec2 x = g.pixel_center(i, j);
      g.at(i, j) = std::sin(2.0 * x.x) * std::cos(1.3 * x.y) + 0.2 * x.y;
    }
  const auto cs = extract_isolines(g, 0.0);
  ASSERT_FALSE(cs.empty());
  for (const Contour& c : cs)
    for (std::size_t k = 0; k < segment_count(c); ++k) {
      const auto [a, b] = segment(c, k);
      const Vec2 d = (b - a) * (1.0 / norm(b - a));
      const Vec2 mid = (a + b) * 0.5;
      const Vec2 left{-d.y, d.x};
      const double hi = interpolate(g, mid + left * 0.02), lo = interpolate(g, mid - left * 0.02);
      EXPECT_GT(hi, lo);
    }
}

TEST(Isolines, ConstantGridIsEmpty) {
  FieldGrid g = make_grid(20, 20, 1.0, {0, 0});
  std::fill(g.values.begin(), g.values.end(), 0.5);
  EXPECT_TRUE(extract_isolines(g, 0.0).empty());
}

TEST(Isolines, RejectsNonFinite) {
  FieldGrid g = make_grid(4, 4, 1.0, {0, 0});
  g.at(1, 1) = NAN;
  EXPECT_THROW(extract_isolines(g, 0.0), std::invalid_argument);
}

TEST(Isolines, EveryCrossingUsedOnce) {
  const FieldGrid g = random_grid(64, 3);
  std::vector<std::pair<double, double>> census;
  auto crossing = [&](std::size_t i0, std::size_t j0, std::size_t i1, std::size_t j1) {
    const double a = g.at(i0, j0), b = g.at(i1, j1);
    if ((a > 0) == (b > 0)) return;
    const double t = -a / (b - a);
    census.push_back({i0 + t * (double(i1) - i0), j0 + t * (double(j1) - j0)});
  };
  for (std::size_t j = 0; j < 64; ++j)
    for (std::size_t i = 0; i < 64; ++i) {
      if (i + 1 < 64) crossing(i, j, i + 1, j);
      if (j + 1 < 64) crossing(i, j, i, j + 1);
    }
  const auto cs = extract_isolines(g, 0.0, 3);
  std::vector<std::pair<double, double>> used;
  for (const Contour& c : cs) {
    if (!c.closed) {
      for (Vec2 end : {c.vertices.front(), c.vertices.back()}) {
        const bool on_edge = end.x == 0 || end.y == 0 || end.x == 63 || end.y == 63;
        EXPECT_TRUE(on_edge);
      }
      EXPECT_TRUE(c.touches_boundary);
    }
    for (Vec2 v : c.vertices) used.push_back({v.x, v.y});
  }
  std::sort(census.begin(), census.end());
  std::sort(used.begin(), used.end());
  ASSERT_EQ(used.size(), census.size());
  for (std::size_t k = 0; k < used.size(); ++k) {
    EXPECT_NEAR(used[k].first, census[k].first, 1e-12);
    EXPECT_NEAR(used[k].second, census[k].second, 1e-12);
  }
}

TEST(Isolines, VerticesLieOnLevel) {
  const FieldGrid g = random_grid(48, 4);
  for (const Contour& c : extract_isolines(g, 0.3))
    for (Vec2 v : c.vertices) EXPECT_NEAR(interpolate(g, v), 0.3, 1e-9);
}

TEST(Isolines, WorkerCountIndependent) {
  const FieldGrid g = random_grid(200, 5);
  const auto a = extract_isolines(g, 0.0, 1);
  const auto b = extract_isolines(g, 0.0, 4);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].vertices, b[k].vertices);
}

TEST(Isolines, RotationPermutesContours) {
  const FieldGrid g = random_grid(80, 6);
  const FieldGrid r = rotate90(g);
  auto summary = [](const std::vector<Contour>& cs) {
    std::vector<std::array<double, 3>> out;
    for (const Contour& c : cs)
      if (c.closed && c.vertices.size() >= 3)
        out.push_back({perimeter(c), mean_radius(c), gyration_radius(c)});
    std::sort(out.begin(), out.end());
    return out;
  };
  const auto a = summary(extract_isolines(g, 0.0));
  const auto b = summary(extract_isolines(r, 0.0));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k)
    for (int m = 0; m < 3; ++m) EXPECT_NEAR(a[k][m], b[k][m], 1e-9);
}

TEST(Isolines, RenderedCircleRoundTrip) {
  BlobDatabase db;
  db.window = Rect::centered(30, 30);
  db.support_sigma = 10.0;
  Blob b = make_blob(0.0, {0, 0}, 1.0);
  b.evo.I = Covariance(0.0, 100.0, 100.0);
  db.blobs.push_back(b);
  FieldGrid g = render(db, GridShape::covering(db.window, 0.06));
  const double offset = std::exp(-0.5) / 100.0;  // level set at radius 10
  for (double& v : g.values) v -= offset;
  const auto cs = extract_isolines(g, 0.0);
  ASSERT_EQ(cs.size(), 1u);
  EXPECT_NEAR(perimeter(cs[0]) / (2 * M_PI * 10), 1.0, 0.02);
}

TEST(Geometry, PerimeterExamples) {
  EXPECT_NEAR(perimeter(polygon(1000, 1.0)), 2 * M_PI, 1e-4);
  Contour seg;
  seg.vertices = {{0, 0}, {3, 4}};
  EXPECT_DOUBLE_EQ(perimeter(seg), 5.0);
}

TEST(Geometry, MeanRadius) {
  EXPECT_NEAR(mean_radius(polygon(4000, 3.0)), 3.0, 1e-6);
  EXPECT_NEAR(mean_radius(polygon(4000, 3.0), RadiusWeighting::Vertex), 3.0, 1e-12);
  Contour seg;
  for (int k = 0; k <= 100; ++k) seg.vertices.push_back({-2.0 + 4.0 * k / 100, 0.0});
  EXPECT_NEAR(mean_radius(seg), 2.0 / std::sqrt(3.0), 1e-12);
}

TEST(Geometry, MeanRadiusStableUnderResampling) {
  const FieldGrid g = random_grid(64, 7);
  for (const Contour& c : extract_isolines(g, 0.0)) {
    if (!c.closed || c.vertices.size() < 3) continue;
    Contour dense = c;
    dense.vertices.clear();
    for (std::size_t k = 0; k < c.vertices.size(); ++k) {
      const auto [a, b] = segment(c, k);
      dense.vertices.push_back(a);
      dense.vertices.push_back((a + b) * 0.5);
    }
    EXPECT_NEAR(mean_radius(dense), mean_radius(c), 1e-3 * mean_radius(c));
  }
}

TEST(Geometry, GyrationRadius) {
  EXPECT_NEAR(gyration_radius(polygon(1000, 2.0)), 2.0, 1e-12);
  Contour seg;
  seg.vertices = {{-1.5, 0}, {0.2, 0}, {1.5, 0}};
  EXPECT_DOUBLE_EQ(gyration_radius(seg), 1.5);
}

TEST(Geometry, DiameterMatchesBruteForce) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> d;
  Contour c;
  Vec2 p{0, 0};
  for (int k = 0; k < 10000; ++k) {
    p += Vec2{d(rng), 0.5 * d(rng)};
    c.vertices.push_back(p);
  }
  double best = 0.0;
  for (std::size_t i = 0; i < c.vertices.size(); ++i)
    for (std::size_t j = i + 1; j < c.vertices.size(); ++j)
      best = std::max(best, norm2(c.vertices[i] - c.vertices[j]));
  EXPECT_DOUBLE_EQ(gyration_radius(c), 0.5 * std::sqrt(best));
}
