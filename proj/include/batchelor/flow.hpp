#ifndef BATCHELOR_FLOW_HPP
#define BATCHELOR_FLOW_HPP

// White-in-time, spatially linear incompressible flow v = sigma(t) x and the
// per-blob Lagrangian operators it generates.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <array>
#include <deque>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "batchelor/linalg.hpp"
#include "batchelor/random.hpp"

namespace batchelor {

struct FlowParams {
  double D = 1.0;        // gradient covariance amplitude, 1/time
  double kappa_d = 0.0;  // molecular diffusivity, L^2/time
  double dt = 1e-2;      // integration step
  std::uint64_t seed = 1;

  void validate() const {
    if (!(D >= 0.0) || !std::isfinite(D)) throw std::invalid_argument("flow.D must be >= 0");
    if (!(kappa_d >= 0.0) || !std::isfinite(kappa_d))
      throw std::invalid_argument("flow.kappa_d must be >= 0");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("flow.dt must be > 0");
  }
};

/// Velocity gradient held constant over one step.  Traceless by construction.
struct GradientSample {
  Mat2 sigma;
};

/// Draws the step-k gradient.  Components: sigma = sqrt(D/dt) [[g, u+v], [u-v, -g]]
/// with g, u ~ N(0,1) and v ~ N(0,2), which reproduces
/// <s_ij s_kl> = D/dt [3 d_ik d_jl - d_ij d_kl - d_il d_jk].
inline GradientSample draw_gradient(const FlowParams& p, std::size_t step) {
  if (p.D == 0.0) return {};
  SplitMix64 engine(derive_seed(p.seed, step));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double g = normal(engine);
  const double u = normal(engine);
  const double v = std::sqrt(2.0) * normal(engine);
  const double amp = std::sqrt(p.D / p.dt);
  return {Mat2{amp * g, amp * (u + v), amp * (u - v), -amp * g}};
}

/// Append-only, lazily generated sample stream.  sample(k) depends only on
/// (seed, D, dt, k); concurrent readers are safe.
class FlowRealization {
 public:
  explicit FlowRealization(FlowParams params, double t_start = 0.0)
      : params_(params), t_start_(t_start) {
    params_.validate();
  }

  const FlowParams& params() const { return params_; }
  double t_start() const { return t_start_; }
  double dt() const { return params_.dt; }

  const GradientSample& sample(std::size_t step) const { return entry(step).sample; }

  /// exp(sigma_k dt), cached.
  const Mat2& propagator(std::size_t step) const { return entry(step).propagator; }

  double step_begin(std::size_t step) const {
    return t_start_ + static_cast<double>(step) * params_.dt;
  }

  /// Index k with step_begin(k) <= t < step_begin(k+1).
  std::size_t step_at(double t) const {
    if (t < t_start_) throw std::invalid_argument("time precedes flow realization start");
    auto k = static_cast<std::size_t>(std::floor((t - t_start_) / params_.dt));
    while (step_begin(k + 1) <= t) ++k;
    while (k > 0 && step_begin(k) > t) --k;
    return k;
  }

  std::size_t cached_steps() const {
    std::lock_guard lock(mutex_);
    return cache_.size();
  }

 private:
  struct Entry {
    GradientSample sample;
    Mat2 propagator;
  };

  const Entry& entry(std::size_t step) const {
    std::lock_guard lock(mutex_);
    while (cache_.size() <= step) {
      const GradientSample s = draw_gradient(params_, cache_.size());
      cache_.push_back({s, expm_traceless(s.sigma * params_.dt)});
    }
    return cache_[step];
  }

  FlowParams params_;
  double t_start_;
  mutable std::mutex mutex_;
  mutable std::deque<Entry> cache_;
};

inline GradientSample sample_gradient(const FlowRealization& flow, std::size_t step_index) {
  return flow.sample(step_index);
}

/// Lagrangian state of one blob: r(t) = W(t, t0) r(t0), and its covariance I.
struct EvolutionState {
  UnimodularMap W;
  Covariance I = Covariance::identity();
  double t0 = 0.0;
  double t = 0.0;

  static EvolutionState fresh(double t0) { return {UnimodularMap{}, Covariance::identity(), t0, t0}; }
};

namespace detail {

inline void apply_step(EvolutionState& s, const Mat2& propagator, double kappa_d, double h) {
  s.W.left_multiply(propagator);
  s.I.congruence(propagator);
  s.I.add_isotropic(2.0 * kappa_d * h);
}

}  // namespace detail

/// One step of length h (default params.dt):
/// W' = exp(sigma h) W,  I' = exp(sigma h) I exp(sigma h)^T + 2 kappa_d h 1.
inline EvolutionState step_evolution(EvolutionState state, const GradientSample& g,
                                     const FlowParams& params, double h = -1.0) {
  if (!g.sigma.finite()) throw std::invalid_argument("non-finite velocity gradient sample");
  if (h < 0.0) h = params.dt;
  detail::apply_step(state, expm_traceless(g.sigma * h), params.kappa_d, h);
  state.t += h;
  return state;
}

/// Advances a state through the shared sample stream to t_target.  Partial
/// steps reuse the gradient of the step they fall in, so a blob created
/// mid-step sees exactly the same piecewise-constant flow as everyone else.
inline void advance_to(EvolutionState& s, const FlowRealization& flow, double t_target) {
  if (t_target < s.t) throw std::invalid_argument("advance_to: target precedes state time");
  const double kappa = flow.params().kappa_d;
  while (s.t < t_target) {
    const std::size_t k = flow.step_at(s.t);
    const double begin = flow.step_begin(k);
    const double end = flow.step_begin(k + 1);
    const double stop = std::min(end, t_target);
    const double h = stop - s.t;
    if (s.t == begin && stop == end) {
      detail::apply_step(s, flow.propagator(k), kappa, h);
    } else {
      detail::apply_step(s, expm_traceless(flow.sample(k).sigma * h), kappa, h);
    }
    s.t = stop;
    if (!std::isfinite(s.W.log_stretch()) || !std::isfinite(s.I.det()))
      throw std::runtime_error("evolution produced non-finite state at t=" + std::to_string(s.t));
  }
}

struct LyapunovEstimate {
  double lambda = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
  /// stderr/lambda above 5%.
  bool noisy = false;
};

/// Monte-Carlo estimate of the top Lyapunov exponent:
/// lambda = < log |W(t) e| > / t over independent realizations and unit vectors e.
inline LyapunovEstimate estimate_lyapunov(const FlowParams& params, std::size_t n_steps,
                                          std::size_t n_samples) {
  params.validate();
  if (n_steps == 0 || n_samples < 2)
    throw std::invalid_argument("estimate_lyapunov needs n_steps >= 1 and n_samples >= 2");
  const double t = static_cast<double>(n_steps) * params.dt;
  constexpr int kDirections = 4;
  std::vector<double> per_sample;
  per_sample.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    FlowParams p = params;
    p.seed = derive_seed(params.seed, 0x4c59'0000'0000ULL + i);
    std::array<Vec2, kDirections> v;
    std::array<double, kDirections> log_growth{};
    for (int e = 0; e < kDirections; ++e) {
      const double ang = M_PI * e / kDirections;
      v[e] = {std::cos(ang), std::sin(ang)};
    }
    for (std::size_t k = 0; k < n_steps; ++k) {
      const Mat2 prop = expm_traceless(draw_gradient(p, k).sigma * p.dt);
      for (int e = 0; e < kDirections; ++e) v[e] = prop * v[e];
      if ((k & 15) == 15 || k + 1 == n_steps) {
        for (int e = 0; e < kDirections; ++e) {
          const double n = norm(v[e]);
          log_growth[e] += std::log(n);
          v[e] = v[e] * (1.0 / n);
        }
      }
    }
    double sum = 0.0;
    for (double g : log_growth) sum += g;
    per_sample.push_back(sum / kDirections / t);
  }
  double mean = 0.0;
  for (double x : per_sample) mean += x;
  mean /= static_cast<double>(n_samples);
  double var = 0.0;
  for (double x : per_sample) var += (x - mean) * (x - mean);
  var /= static_cast<double>(n_samples - 1);
  LyapunovEstimate out;
  out.lambda = mean;
  out.std_error = std::sqrt(var / static_cast<double>(n_samples));
  out.samples = n_samples;
  out.noisy = !(out.std_error <= 0.05 * std::abs(out.lambda));
  return out;
}

}  // namespace batchelor

#endif
