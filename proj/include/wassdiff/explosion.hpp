#pragma once

// Finite-time blow-up of the probability flow ODE driven by the perturbed score
// s(t, x) = grad log p_t(x) + alpha |x| x, and the scalar comparison ODE behind it.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "io.hpp"
#include "numeric.hpp"
#include "score.hpp"
#include "target.hpp"

namespace wassdiff {

struct ExplosionOutcome {
  bool exploded = false;
  double tau_hat = std::numeric_limits<double>::infinity();  // reverse time of the crossing
  double final_norm = 0.0;
  double x0_norm = 0.0;
};

struct BlowupOptions {
  double threshold = 1e8;  // norm at which a trajectory counts as exploded
  int max_refine = 30;     // a step may be halved down to h / 2^max_refine
  double max_growth = 0.1; // halve while one step grows the norm by more than this fraction
};

/// Closed-form blow-up time 4 / (alpha sqrt(y0)) of z' = (alpha/2) z^(3/2), z(0) = y0.
/// Returns +inf when alpha or y0 is zero (no blow-up from the comparison).
inline double blowup_time_bound(double alpha, double y0) {
  require(alpha >= 0.0 && y0 >= 0.0, ErrorKind::invalid_input, "need alpha >= 0 and y0 >= 0");
  if (alpha == 0.0 || y0 == 0.0) return std::numeric_limits<double>::infinity();
  return 4.0 / (alpha * std::sqrt(y0));
}

/// Smallest y with alpha y^(3/2) - y/eps - R sqrt(y)/eps >= (alpha/2) y^(3/2): past it the
/// squared norm grows at least like the comparison ODE. Found by bisection.
inline double comparison_constant(double alpha, double eps, double radius) {
  require(alpha > 0.0 && eps > 0.0 && radius >= 0.0, ErrorKind::invalid_input,
          "need alpha > 0, eps > 0, R >= 0");
  auto margin = [&](double y) {
    const double r = std::sqrt(y);
    return 0.5 * alpha * y * r - y / eps - radius * r / eps;
  };
  double lo = 0.0, hi = 1.0;
  while (margin(hi) < 0.0) {
    lo = hi;
    hi *= 2.0;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (margin(mid) < 0.0 ? lo : hi) = mid;
  }
  return hi;
}

/// Integrates x' = f(t, x) over [0, t_end] on the base step h with classical RK4, halving
/// a step while it would grow |x| by more than max_growth (down to h / 2^max_refine).
/// Stops at the first accepted step that reaches the threshold or leaves the finite range.
template <class Rhs>
ExplosionOutcome integrate_until_blowup(Rhs&& f, std::span<const double> x0, double t_end,
                                        double h, const BlowupOptions& options = {}) {
  require(h > 0.0 && t_end > 0.0, ErrorKind::invalid_input, "need h > 0 and t_end > 0");
  require(options.threshold >= 1e6, ErrorKind::invalid_input, "threshold must be >= 1e6");
  const std::size_t d = x0.size();
  std::vector<double> x(x0.begin(), x0.end()), trial(d), k1(d), k2(d), k3(d), k4(d), tmp(d);
  ExplosionOutcome out;
  out.x0_norm = norm(x);
  const double k_min = std::ldexp(h, -options.max_refine);

  // Returns false if any stage left the finite range.
  auto rk4 = [&](double t, double k) {
    f(t, x, k1);
    for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * k * k1[i];
    if (!all_finite(tmp)) return false;
    f(t + 0.5 * k, tmp, k2);
    for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * k * k2[i];
    if (!all_finite(tmp)) return false;
    f(t + 0.5 * k, tmp, k3);
    for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + k * k3[i];
    if (!all_finite(tmp)) return false;
    f(t + k, tmp, k4);
    for (std::size_t i = 0; i < d; ++i) trial[i] = x[i] + k / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    return all_finite(trial);
  };

  const std::size_t steps = static_cast<std::size_t>(std::ceil(t_end / h - 1e-9));
  for (std::size_t n = 0; n < steps; ++n) {
    const double t_start = static_cast<double>(n) * h;
    const double t_stop = n + 1 == steps ? t_end : static_cast<double>(n + 1) * h;
    double t = t_start;
    while (t < t_stop) {
      double k = t_stop - t;
      const double before = norm(x);
      double now = 0.0;
      for (;;) {
        now = rk4(t, k) ? norm(trial) : std::numeric_limits<double>::infinity();
        const bool too_fast = now > before * (1.0 + options.max_growth) + 1e-300;
        if (!too_fast || k <= k_min) break;
        k *= 0.5;
      }
      t = (t + k >= t_stop) ? t_stop : t + k;
      if (!(now < options.threshold)) {
        out.exploded = true;
        out.tau_hat = t;
        out.final_norm = now;
        return out;
      }
      x.swap(trial);
    }
  }
  out.final_norm = norm(x);
  return out;
}

/// Reverse probability flow x' = s(T - t, x) / 2 with s = grad log p + alpha |x| x, run
/// from x0 over reverse times [0, T - eps].
inline ExplosionOutcome simulate_perturbed_ode(const ScoreField& field, const TimeGrid& grid,
                                               std::span<const double> x0,
                                               const BlowupOptions& options = {}) {
  const double T = grid.horizon();
  auto rhs = [&](double t, std::span<const double> x, std::span<double> out) {
    field.evaluate(T - t, x, out);
    for (double& v : out) v *= 0.5;
  };
  return integrate_until_blowup(rhs, x0, T - grid.epsilon(), grid.step(), options);
}

inline ExplosionOutcome simulate_perturbed_ode(std::shared_ptr<const TargetDistribution> target,
                                               double alpha, const TimeGrid& grid,
                                               std::span<const double> x0,
                                               const BlowupOptions& options = {}) {
  return simulate_perturbed_ode(ScoreField::quadratic(std::move(target), alpha), grid, x0, options);
}

/// The scalar comparison ODE z' = (alpha/2) z^(3/2) from z0, integrated to t_end.
inline ExplosionOutcome simulate_comparison_ode(double alpha, double z0, double t_end, double h,
                                                const BlowupOptions& options = {}) {
  require(z0 >= 0.0, ErrorKind::invalid_input, "z0 must be >= 0");
  auto rhs = [alpha](double, std::span<const double> z, std::span<double> out) {
    out[0] = 0.5 * alpha * std::pow(std::max(z[0], 0.0), 1.5);
  };
  const std::vector<double> start{z0};
  return integrate_until_blowup(rhs, start, t_end, h, options);
}

struct ExplosionProbability {
  double delta = 0.0;
  std::size_t count = 0;  // trajectories with tau_hat <= delta
  double p_hat = 0.0;
  Interval ci;
};

struct ExplosionStudy {
  double alpha = 0.0;
  std::size_t replicates = 0;
  std::vector<ExplosionProbability> by_delta;
  ExplosionProbability anywhere;  // tau_hat <= T - eps
  std::vector<ExplosionOutcome> outcomes;
};

/// Monte Carlo estimate of P(tau <= delta) with x0 drawn from the law of X_T.
inline ExplosionStudy explosion_probability(std::shared_ptr<const TargetDistribution> target,
                                            double alpha, const TimeGrid& grid,
                                            const std::vector<double>& deltas, std::size_t m,
                                            std::uint64_t seed, int threads = 1,
                                            const BlowupOptions& options = {}) {
  require(m >= 100, ErrorKind::invalid_input, "need at least 100 replicates");
  const ScoreField field = ScoreField::quadratic(target, alpha);
  const SampleBatch starts = forward_marginal_sample(*target, grid.horizon(), m, seed);
  ExplosionStudy study;
  study.alpha = alpha;
  study.replicates = m;
  study.outcomes.resize(m);
  parallel_for(m, threads, [&](std::size_t i) {
    study.outcomes[i] = simulate_perturbed_ode(field, grid, starts.row(i), options);
  });
  auto tally = [&](double delta) {
    ExplosionProbability p;
    p.delta = delta;
    for (const auto& o : study.outcomes) {
      if (o.exploded && o.tau_hat <= delta) ++p.count;
    }
    p.p_hat = static_cast<double>(p.count) / static_cast<double>(m);
    p.ci = wilson_interval(p.count, m);
    return p;
  };
  for (double delta : deltas) study.by_delta.push_back(tally(delta));
  study.anywhere = tally(grid.horizon() - grid.epsilon());
  return study;
}

inline CsvTable outcomes_table(const ExplosionStudy& study) {
  CsvTable table({"replicate", "x0_norm", "exploded", "tau_hat", "bound_tau"});
  for (std::size_t i = 0; i < study.outcomes.size(); ++i) {
    const auto& o = study.outcomes[i];
    table.add_row({std::to_string(i), format_number(o.x0_norm), o.exploded ? "1" : "0",
                   format_number(o.tau_hat),
                   format_number(blowup_time_bound(study.alpha, o.x0_norm * o.x0_norm))});
  }
  return table;
}

}  // namespace wassdiff
