#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "batchelor/flow.hpp"

using namespace batchelor;

namespace {

double tensor(int i, int j, int k, int l) {
  auto d = [](int a, int b) { return a == b ? 1.0 : 0.0; };
  return 3.0 * d(i, k) * d(j, l) - d(i, j) * d(k, l) - d(i, l) * d(j, k);
}

double entry(const Mat2& m, int i, int j) {
  const std::array<double, 4> v{m.a, m.b, m.c, m.d};
  return v[2 * i + j];
}

// Long double product of per-step exponentials, the reference for W.
struct RefMat {
  long double a = 1, b = 0, c = 0, d = 1;
  void left(const Mat2& e) {
    const long double na = e.a * a + e.b * c, nb = e.a * b + e.b * d;
    const long double nc = e.c * a + e.d * c, nd = e.c * b + e.d * d;
    a = na;
    b = nb;
    c = nc;
    d = nd;
  }
};

}  // namespace

TEST(Flow, SampleIsDeterministic) {
  FlowRealization flow({1.0, 0.0, 1e-2, 42});
  FlowRealization other({1.0, 0.0, 1e-2, 42});
  for (std::size_t k : {0u, 7u, 1000u, 3u}) {
    EXPECT_EQ(flow.sample(k).sigma, other.sample(k).sigma);
    EXPECT_EQ(sample_gradient(flow, k).sigma, flow.sample(k).sigma);
  }
}

TEST(Flow, ZeroAmplitudeGivesZeroGradient) {
  FlowRealization flow({0.0, 0.0, 1e-2, 5});
  EXPECT_EQ(flow.sample(3).sigma, Mat2{});
}

TEST(Flow, SampleIsTraceless) {
  FlowRealization flow({2.5, 0.0, 1e-3, 9});
  for (std::size_t k = 0; k < 1000; ++k) EXPECT_EQ(flow.sample(k).sigma.trace(), 0.0);
}

TEST(Flow, SecondMomentsMatchIsotropicTensor) {
  const FlowParams p{0.7, 0.0, 0.02, 123};
  constexpr std::size_t n = 1000000;
  std::array<double, 16> acc{};
  for (std::size_t k = 0; k < n; ++k) {
    const Mat2 s = draw_gradient(p, k).sigma;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) acc[8 * i + 4 * j + 2 * a + b] += entry(s, i, j) * entry(s, a, b);
  }
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          const double got = acc[8 * i + 4 * j + 2 * a + b] / n * p.dt / p.D;
          const double want = tensor(i, j, a, b);
          if (want != 0.0)
            EXPECT_NEAR(got, want, 0.01 * std::abs(want)) << i << j << a << b;
          else
            EXPECT_NEAR(got, 0.0, 0.01) << i << j << a << b;
        }
}

TEST(Flow, RejectsInvalidParams) {
  EXPECT_THROW(FlowRealization({-1.0, 0.0, 1e-2, 1}), std::invalid_argument);
  EXPECT_THROW(FlowRealization({1.0, -1.0, 1e-2, 1}), std::invalid_argument);
  EXPECT_THROW(FlowRealization({1.0, 0.0, 0.0, 1}), std::invalid_argument);
}

TEST(Evolution, StaticFlowLeavesStateAlone) {
  const FlowParams p{0.0, 0.0, 1e-2, 1};
  EvolutionState s = EvolutionState::fresh(0.0);
  for (int k = 0; k < 100; ++k) s = step_evolution(s, {}, p);
  EXPECT_NEAR(s.t, 1.0, 1e-12);
  EXPECT_EQ(s.W.matrix(), Mat2::identity());
  EXPECT_DOUBLE_EQ(s.I.major(), 1.0);
  EXPECT_DOUBLE_EQ(s.I.minor(), 1.0);
}

TEST(Evolution, DiffusionOnlyGrowsIsotropically) {
  const FlowParams p{0.0, 0.3, 1e-2, 1};
  EvolutionState s = EvolutionState::fresh(0.0);
  const int n = 250;
  for (int k = 0; k < n; ++k) s = step_evolution(s, {}, p);
  const double want = 1.0 + 2.0 * p.kappa_d * n * p.dt;
  const Sym2 m = s.I.matrix();
  EXPECT_NEAR(m.xx, want, 1e-12);
  EXPECT_NEAR(m.yy, want, 1e-12);
  EXPECT_NEAR(m.xy, 0.0, 1e-12);
}

TEST(Evolution, RejectsNonFiniteGradient) {
  GradientSample g{Mat2{NAN, 0.0, 0.0, 0.0}};
  EXPECT_THROW(step_evolution(EvolutionState::fresh(0.0), g, FlowParams{}), std::invalid_argument);
}

TEST(Evolution, UnimodularityOverTenThousandSteps) {
  const FlowParams p{0.05, 0.0, 1e-2, 77};
  FlowRealization flow(p);
  EvolutionState s = EvolutionState::fresh(0.0);
  RefMat ref;
  for (std::size_t k = 0; k < 10000; ++k) {
    s = step_evolution(s, flow.sample(k), p);
    ref.left(expm_traceless(flow.sample(k).sigma * p.dt));
  }
  const Mat2 w = s.W.matrix();
  const long double det = static_cast<long double>(w.a) * w.d - static_cast<long double>(w.b) * w.c;
  EXPECT_LT(std::abs(static_cast<double>(det - 1.0L)), 1e-9);
  const double scale = std::exp(s.W.log_stretch());
  EXPECT_GT(s.W.log_stretch(), 1.0);
  EXPECT_NEAR(w.a, static_cast<double>(ref.a), 1e-10 * scale);
  EXPECT_NEAR(w.b, static_cast<double>(ref.b), 1e-10 * scale);
  EXPECT_NEAR(w.c, static_cast<double>(ref.c), 1e-10 * scale);
  EXPECT_NEAR(w.d, static_cast<double>(ref.d), 1e-10 * scale);
}

TEST(Evolution, AdvectionPreservesCovarianceDeterminant) {
  const FlowParams p{1.0, 0.0, 1e-2, 3};
  FlowRealization flow(p);
  EvolutionState s = EvolutionState::fresh(0.0);
  advance_to(s, flow, 100.0);
  EXPECT_GT(s.W.log_stretch(), 30.0);
  EXPECT_NEAR(s.I.det(), 1.0, 1e-8);
  EXPECT_GT(s.I.minor(), 0.0);
  // I = W W^T: the major variance is e^{2 stretch}.
  EXPECT_NEAR(0.5 * std::log(s.I.major()), s.W.log_stretch(), 1e-9);
}

TEST(Evolution, CovarianceStaysPositiveWithDiffusion) {
  const FlowParams p{1.0, 1e-4, 1e-2, 4};
  FlowRealization flow(p);
  EvolutionState s = EvolutionState::fresh(0.0);
  for (int i = 1; i <= 20; ++i) {
    advance_to(s, flow, 5.0 * i);
    EXPECT_GT(s.I.minor(), 0.0);
    EXPECT_GE(s.I.det(), 1.0 - 1e-12);
  }
}

TEST(Evolution, ComposabilityOfAdvance) {
  const FlowParams p{1.0, 1e-3, 1e-2, 11};
  FlowRealization flow(p);
  EvolutionState once = EvolutionState::fresh(0.0);
  EvolutionState twice = once;
  advance_to(once, flow, 20.0);
  advance_to(twice, flow, 10.0);
  advance_to(twice, flow, 20.0);
  EXPECT_NEAR(once.W.log_stretch(), twice.W.log_stretch(), 1e-12);
  EXPECT_NEAR(once.W.left_angle(), twice.W.left_angle(), 1e-12);
  EXPECT_NEAR(once.I.det(), twice.I.det(), 1e-12 * once.I.det());
}

TEST(Evolution, MidStepBirthMatchesSplitStep) {
  const FlowParams p{1.0, 0.0, 0.1, 2};
  FlowRealization flow(p);
  EvolutionState late = EvolutionState::fresh(0.234);
  advance_to(late, flow, 1.0);
  // Reference: explicit exponentials of the step gradients over the same pieces.
  Mat2 m = expm_traceless(flow.sample(2).sigma * (0.3 - 0.234));
  for (std::size_t k = 3; k < 10; ++k) m = expm_traceless(flow.sample(k).sigma * 0.1) * m;
  EXPECT_LT(max_abs_diff(late.W.matrix(), m), 1e-12);
}

TEST(Evolution, AdvanceRejectsPast) {
  FlowRealization flow(FlowParams{});
  EvolutionState s = EvolutionState::fresh(1.0);
  EXPECT_THROW(advance_to(s, flow, 0.5), std::invalid_argument);
}

TEST(Lyapunov, ZeroFlow) {
  const auto est = estimate_lyapunov({0.0, 0.0, 1e-2, 1}, 1000, 10);
  EXPECT_NEAR(est.lambda, 0.0, 1e-12);
}

TEST(Lyapunov, LinearInAmplitude) {
  const auto a = estimate_lyapunov({0.5, 0.0, 1e-2, 1}, 4000, 200);
  const auto b = estimate_lyapunov({1.0, 0.0, 1e-2, 1}, 4000, 200);
  EXPECT_GT(a.lambda, 0.0);
  EXPECT_FALSE(a.noisy);
  const double ratio = b.lambda / a.lambda;
  const double err = ratio * std::hypot(a.std_error / a.lambda, b.std_error / b.lambda);
  EXPECT_NEAR(ratio, 2.0, 3.0 * err);
}

TEST(Lyapunov, StepIndependent) {
  const auto a = estimate_lyapunov({1.0, 0.0, 2e-2, 8}, 2000, 200);
  const auto b = estimate_lyapunov({1.0, 0.0, 1e-2, 9}, 4000, 200);
  EXPECT_NEAR(a.lambda, b.lambda, 3.0 * std::hypot(a.std_error, b.std_error));
}

TEST(Lyapunov, SmallAmplitudeHasSmallError) {
  const auto est = estimate_lyapunov({0.1, 0.0, 1e-3, 21}, 100000, 100);
  EXPECT_GT(est.lambda, 0.0);
  EXPECT_LT(est.std_error / est.lambda, 0.05);
}
