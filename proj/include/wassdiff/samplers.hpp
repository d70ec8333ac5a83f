#pragma once

// Reverse-time samplers (Euler-Maruyama, Euler ODE, Heun), a tolerance-controlled
// reference integrator for the exact probability flow, and coupled strong-error runs.
//
// Reverse time t runs from 0 to T - eps; the score is queried at forward time T - t.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bounds.hpp"
#include "error.hpp"
#include "io.hpp"
#include "numeric.hpp"
#include "rng.hpp"
#include "score.hpp"
#include "target.hpp"

namespace wassdiff {

enum class Algorithm { euler_maruyama, euler_ode, heun };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::euler_maruyama: return "euler-maruyama";
    case Algorithm::euler_ode: return "euler-ode";
    case Algorithm::heun: return "heun";
  }
  return "unknown";
}

inline Algorithm parse_algorithm(const std::string& name) {
  if (name == "euler-maruyama" || name == "em" || name == "sde") return Algorithm::euler_maruyama;
  if (name == "euler-ode" || name == "euler" || name == "ode") return Algorithm::euler_ode;
  if (name == "heun") return Algorithm::heun;
  throw Error(ErrorKind::invalid_input, "unknown algorithm '" + name + "'");
}

struct SamplerSpec {
  Algorithm algorithm = Algorithm::euler_ode;
  ScoreField field;
  TimeGrid grid;

  /// Variance of the Gaussian start: the horizon, extended by tau for smoothed targets.
  double init_variance() const { return grid.horizon() + field.target().smoothing; }
};

/// Any coordinate above this magnitude counts as a divergent trajectory.
inline constexpr double kDivergenceLimit = 1e12;

inline bool escaped(std::span<const double> x) {
  for (double v : x) {
    if (!(std::abs(v) <= kDivergenceLimit)) return true;
  }
  return false;
}

/// Scratch buffers for one trajectory; reuse across steps to stay allocation-free.
struct StepWorkspace {
  explicit StepWorkspace(std::size_t d) : s0(d), s1(d), y(d) {}
  std::vector<double> s0, s1, y;
};

/// One update from forward time `s_from` to `s_to = s_from - h`. `gaussian` holds d
/// standard normals and is read only by Euler-Maruyama.
inline void sampler_step(Algorithm algorithm, const ScoreField& field, double s_from, double s_to,
                         double h, std::span<double> x, std::span<const double> gaussian,
                         StepWorkspace& ws) {
  const std::size_t d = x.size();
  field.evaluate(s_from, x, ws.s0);
  switch (algorithm) {
    case Algorithm::euler_maruyama: {
      const double root_h = std::sqrt(h);
      for (std::size_t k = 0; k < d; ++k) x[k] += h * ws.s0[k] + root_h * gaussian[k];
      return;
    }
    case Algorithm::euler_ode:
      for (std::size_t k = 0; k < d; ++k) x[k] += 0.5 * h * ws.s0[k];
      return;
    case Algorithm::heun:
      for (std::size_t k = 0; k < d; ++k) ws.y[k] = x[k] + 0.5 * h * ws.s0[k];
      if (escaped(ws.y)) {
        for (std::size_t k = 0; k < d; ++k) x[k] = ws.y[k];
        return;
      }
      field.evaluate(s_to, ws.y, ws.s1);
      for (std::size_t k = 0; k < d; ++k) x[k] += 0.25 * h * (ws.s0[k] + ws.s1[k]);
      return;
  }
}

namespace detail {

inline void draw_start(const SamplerSpec& spec, std::uint64_t seed, std::size_t replicate,
                       std::span<double> x) {
  rng::Stream stream(seed, rng::tag::init, replicate);
  const double scale = std::sqrt(spec.init_variance());
  for (double& v : x) v = scale * stream.normal();
}

/// Runs the N steps of `spec` on x in place, calling observe(n, x) after each step.
template <class Observe>
void integrate(const SamplerSpec& spec, std::uint64_t seed, std::size_t replicate,
               std::span<double> x, StepWorkspace& ws, std::vector<double>& noise,
               Observe&& observe) {
  const TimeGrid& grid = spec.grid;
  const double h = grid.step();
  for (std::size_t n = 1; n <= grid.steps(); ++n) {
    if (spec.algorithm == Algorithm::euler_maruyama) {
      rng::Stream stream(seed, rng::tag::step_noise, replicate, static_cast<std::uint32_t>(n));
      for (double& g : noise) g = stream.normal();
    }
    sampler_step(spec.algorithm, spec.field, grid.forward_time(n - 1), grid.forward_time(n), h, x,
                 noise, ws);
    if (escaped(x)) throw DivergenceError(n, replicate);
    observe(n, std::span<const double>(x.data(), x.size()));
  }
}

}  // namespace detail

/// Runs the sampler from the given start points (one per row of `start`).
inline SampleBatch run_sampler_from(const SamplerSpec& spec, const SampleBatch& start,
                                    std::uint64_t seed, int threads = 1) {
  require(start.dim == spec.field.dim(), ErrorKind::invalid_input, "start dimension mismatch");
  SampleBatch out = start;
  out.seed = seed;
  out.time_label = spec.grid.epsilon();
  const std::size_t d = start.dim;
  parallel_for(start.size(), threads, [&](std::size_t i) {
    StepWorkspace ws(d);
    std::vector<double> noise(d, 0.0);
    detail::integrate(spec, seed, i, out.row(i), ws, noise, [](std::size_t, auto) {});
  });
  return out;
}

/// Draws n start points from N(0, (T + tau) I) and runs the sampler on each.
inline SampleBatch run_sampler(const SamplerSpec& spec, std::size_t n, std::uint64_t seed,
                               int threads = 1) {
  require(n >= 1, ErrorKind::invalid_input, "n must be >= 1");
  SampleBatch start;
  start.dim = spec.field.dim();
  start.data.resize(n * start.dim);
  for (std::size_t i = 0; i < n; ++i) detail::draw_start(spec, seed, i, start.row(i));
  return run_sampler_from(spec, start, seed, threads);
}

/// Per-node coordinate means and second moments of the sampler path, over n replicates.
struct PathMoments {
  std::size_t dim = 1;
  std::vector<double> mean;    // (N + 1) x d
  std::vector<double> second;  // (N + 1) x d, E[x_k^2]
};

inline PathMoments sampler_path_moments(const SamplerSpec& spec, std::size_t n,
                                        std::uint64_t seed, int threads = 1) {
  const std::size_t d = spec.field.dim();
  const std::size_t nodes = spec.grid.steps() + 1;
  std::vector<CompensatedSum> first(nodes * d), second(nodes * d);
  ordered_blocks(
      n, nodes * d, threads,
      [&](std::size_t i, std::span<double> row) {
        StepWorkspace ws(d);
        std::vector<double> noise(d, 0.0), x(d);
        detail::draw_start(spec, seed, i, x);
        std::copy(x.begin(), x.end(), row.begin());
        detail::integrate(spec, seed, i, x, ws, noise, [&](std::size_t node, auto state) {
          std::copy(state.begin(), state.end(), row.begin() + static_cast<std::ptrdiff_t>(node * d));
        });
      },
      [&](std::size_t, std::span<const double> row) {
        for (std::size_t j = 0; j < row.size(); ++j) {
          first[j] += row[j];
          second[j] += row[j] * row[j];
        }
      },
      64);
  PathMoments out;
  out.dim = d;
  for (std::size_t j = 0; j < nodes * d; ++j) {
    out.mean.push_back(first[j].value() / static_cast<double>(n));
    out.second.push_back(second[j].value() / static_cast<double>(n));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reference probability flow

struct ReferenceOptions {
  double tolerance = 1e-10;
  int max_depth = 20;
  std::size_t base_substeps = 1;  // RK4 substeps per segment at the coarsest pass
};

namespace detail {

// In log effective time sigma = log(s + tau) the flow reads dx/dsigma = (x - E[X | X_s = x]) / 2,
// which stays bounded as s approaches 0.
inline void flow_rhs(const TargetDistribution& target, double sigma, std::span<const double> x,
                     std::span<double> out) {
  posterior_mean(target, std::exp(sigma), x, out);
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = 0.5 * (x[k] - out[k]);
}

inline void rk4_segment(const TargetDistribution& target, double sigma_a, double sigma_b,
                        std::size_t substeps, std::span<double> x, std::vector<double>& buf) {
  const std::size_t d = x.size();
  buf.resize(5 * d);
  std::span<double> k1(buf.data(), d), k2(buf.data() + d, d), k3(buf.data() + 2 * d, d),
      k4(buf.data() + 3 * d, d), tmp(buf.data() + 4 * d, d);
  const double step = (sigma_b - sigma_a) / static_cast<double>(substeps);
  for (std::size_t j = 0; j < substeps; ++j) {
    const double s0 = sigma_a + step * static_cast<double>(j);
    flow_rhs(target, s0, x, k1);
    for (std::size_t k = 0; k < d; ++k) tmp[k] = x[k] + 0.5 * step * k1[k];
    flow_rhs(target, s0 + 0.5 * step, tmp, k2);
    for (std::size_t k = 0; k < d; ++k) tmp[k] = x[k] + 0.5 * step * k2[k];
    flow_rhs(target, s0 + 0.5 * step, tmp, k3);
    for (std::size_t k = 0; k < d; ++k) tmp[k] = x[k] + step * k3[k];
    flow_rhs(target, s0 + step, tmp, k4);
    for (std::size_t k = 0; k < d; ++k) {
      x[k] += step / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
    }
  }
}

}  // namespace detail

/// Integrates the exact probability flow from x0 at forward_times[0] through each later
/// (smaller) forward time, writing the state at every listed time into `out`
/// (forward_times.size() rows of d). The whole path is refined by step doubling with
/// Richardson extrapolation until two successive extrapolated paths agree to `tolerance`.
inline void reference_flow(const TargetDistribution& target,
                           std::span<const double> forward_times, std::span<const double> x0,
                           std::span<double> out, const ReferenceOptions& options = {}) {
  const std::size_t d = target.dim;
  const std::size_t nodes = forward_times.size();
  require(options.tolerance > 0.0, ErrorKind::invalid_input, "tolerance must be > 0");
  require(nodes >= 1 && out.size() == nodes * d && x0.size() == d, ErrorKind::invalid_input,
          "reference_flow buffer sizes do not match");
  std::vector<double> sigma(nodes);
  for (std::size_t i = 0; i < nodes; ++i) {
    sigma[i] = std::log(checked_effective_time(target, forward_times[i]));
    if (i) require(forward_times[i] <= forward_times[i - 1], ErrorKind::invalid_input,
                   "forward times must be non-increasing");
  }
  std::vector<double> coarse(nodes * d), fine(nodes * d), extrap(nodes * d), previous(nodes * d);
  std::vector<double> x(d), buf;
  auto pass = [&](std::size_t substeps, std::vector<double>& dst) {
    std::copy(x0.begin(), x0.end(), x.begin());
    std::copy(x.begin(), x.end(), dst.begin());
    for (std::size_t i = 1; i < nodes; ++i) {
      if (sigma[i] != sigma[i - 1]) detail::rk4_segment(target, sigma[i - 1], sigma[i], substeps, x, buf);
      std::copy(x.begin(), x.end(), dst.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
  };
  std::size_t substeps = std::max<std::size_t>(1, options.base_substeps);
  pass(substeps, coarse);
  bool have_previous = false;
  for (int depth = 1; depth <= options.max_depth; ++depth) {
    substeps *= 2;
    pass(substeps, fine);
    for (std::size_t j = 0; j < extrap.size(); ++j) extrap[j] = (16.0 * fine[j] - coarse[j]) / 15.0;
    if (have_previous) {
      double diff = 0.0;
      for (std::size_t j = 0; j < extrap.size(); ++j) diff = std::max(diff, std::abs(extrap[j] - previous[j]));
      if (diff < options.tolerance) {
        std::copy(extrap.begin(), extrap.end(), out.begin());
        return;
      }
    }
    previous.swap(extrap);
    coarse.swap(fine);
    have_previous = true;
  }
  throw Error(ErrorKind::tolerance_not_met,
              "reference flow did not reach tolerance within the maximum refinement depth");
}

/// Endpoints at forward time eps of the exact flow started at forward time T from each row.
inline SampleBatch reference_reverse_ode(const TargetDistribution& target, const TimeGrid& grid,
                                         const SampleBatch& start,
                                         const ReferenceOptions& options = {}, int threads = 1) {
  require(start.dim == target.dim, ErrorKind::invalid_input, "start dimension mismatch");
  SampleBatch out = start;
  out.time_label = grid.epsilon();
  const std::array<double, 2> times{grid.horizon(), grid.epsilon()};
  ReferenceOptions opts = options;
  opts.base_substeps = std::max<std::size_t>(opts.base_substeps, 8);
  parallel_for(start.size(), threads, [&](std::size_t i) {
    std::vector<double> path(2 * target.dim);
    reference_flow(target, times, start.row(i), path, opts);
    std::copy(path.begin() + static_cast<std::ptrdiff_t>(target.dim), path.end(), out.row(i).begin());
  });
  return out;
}

// ---------------------------------------------------------------------------
// One-step defects

struct DefectEstimate {
  Algorithm algorithm = Algorithm::euler_ode;
  double t = 0.0;  // reverse time at the start of the step
  double h = 0.0;
  double value = 0.0;  // L2 norm of the defect
  Interval ci;
  double bound = 0.0;
  bool precondition_ok = true;
  std::size_t n = 0;
};

struct DefectOptions {
  std::size_t substeps = 256;  // fine Euler-Maruyama substeps inside one SDE step
  double tolerance = 1e-12;    // reference flow tolerance for the ODE defects
  int threads = 1;
};

/// Monte Carlo L2 norm of the quadrature defect of one step of `algorithm` between reverse
/// times t and t + h, started from the exact marginal X_{T-t}:
///   ODE:   int score ds along the exact flow minus h score(t) (Euler) or the trapezoid (Heun);
///   SDE:   int score ds along the exact reverse SDE minus h score(t), with shared noise.
inline DefectEstimate one_step_defect(const TargetDistribution& target, Algorithm algorithm,
                                      const TimeGrid& grid, double t, double h, std::size_t m,
                                      std::uint64_t seed, const DefectOptions& options = {}) {
  require(h > 0.0 && t >= 0.0, ErrorKind::invalid_input, "need t >= 0 and h > 0");
  require(t + h <= grid.horizon() - grid.epsilon() + 1e-12, ErrorKind::invalid_input,
          "the step must end before T - eps");
  require(m >= 2, ErrorKind::invalid_input, "need at least 2 replicates");
  const std::size_t d = target.dim;
  const double s0 = grid.horizon() - t;
  const double s1 = std::max(s0 - h, grid.epsilon());
  const SampleBatch start = forward_marginal_sample(target, s0, m, seed);
  const ScoreField exact = ScoreField::exact(std::make_shared<const TargetDistribution>(target));
  ReferenceOptions ref;
  ref.tolerance = options.tolerance;
  ref.base_substeps = 4;

  MeanSquareAccumulator acc;
  ordered_blocks(
      m, 1, options.threads,
      [&](std::size_t i, std::span<double> row) {
        const auto x0 = start.row(i);
        std::vector<double> a(d), b(d), defect(d);
        exact.evaluate(s0, x0, a);
        if (algorithm == Algorithm::euler_maruyama) {
          const std::size_t k_sub = std::max<std::size_t>(1, options.substeps);
          const double dt = h / static_cast<double>(k_sub);
          const double root_dt = std::sqrt(dt);
          std::vector<double> x(x0.begin(), x0.end()), s(d);
          std::fill(defect.begin(), defect.end(), 0.0);
          rng::Stream stream(seed, rng::tag::reference, i);
          for (std::size_t j = 0; j < k_sub; ++j) {
            exact.evaluate(s0 - dt * static_cast<double>(j), x, s);
            for (std::size_t k = 0; k < d; ++k) {
              defect[k] += dt * s[k];
              x[k] += dt * s[k] + root_dt * stream.normal();
            }
          }
          for (std::size_t k = 0; k < d; ++k) defect[k] -= h * a[k];
        } else {
          const std::array<double, 2> times{s0, s1};
          std::vector<double> path(2 * d);
          reference_flow(target, times, x0, path, ref);
          const std::span<const double> x1(path.data() + d, d);
          if (algorithm == Algorithm::heun) exact.evaluate(s1, x1, b);
          for (std::size_t k = 0; k < d; ++k) {
            const double integral = 2.0 * (x1[k] - x0[k]);
            defect[k] = algorithm == Algorithm::euler_ode ? integral - h * a[k]
                                                          : integral - 0.5 * h * (a[k] + b[k]);
          }
        }
        row[0] = squared_norm(defect);
      },
      [&](std::size_t, std::span<const double> row) { acc.add(row[0]); });

  DefectEstimate out;
  out.algorithm = algorithm;
  out.t = t;
  out.h = h;
  out.n = m;
  out.value = acc.l2();
  out.ci = acc.l2_interval();
  const auto bounds = discretization_bounds(d, target.radius, grid.epsilon(), h);
  out.precondition_ok = bounds.precondition_ok;
  switch (algorithm) {
    case Algorithm::euler_maruyama: out.bound = bounds.sde; break;
    case Algorithm::euler_ode: out.bound = bounds.ode; break;
    case Algorithm::heun: out.bound = bounds.heun; break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Coupled strong-error runs

/// How the sampler's start relates to the reference start.
///   shared:   both start from the same draw of X_T, so only discretization error is measured.
///   gaussian: reference from Z + sqrt(T + tau) G, sampler from sqrt(T + tau) G (shared G).
enum class InitCoupling { shared, gaussian };

inline const char* to_string(InitCoupling c) {
  return c == InitCoupling::shared ? "shared" : "gaussian";
}

struct CoupledOptions {
  std::size_t base_steps = 128;       // N of the coarsest level
  std::size_t levels = 5;             // each level halves h
  std::size_t reference_factor_log2 = 3;  // SDE reference is 2^this finer than the finest level
  std::size_t replicates = 10000;
  InitCoupling coupling = InitCoupling::shared;
  std::size_t defect_replicates = 2000;
  double reference_tolerance = 1e-11;  // ODE reference flow
  int threads = 1;
};

struct LevelResult {
  std::size_t level = 0;
  std::size_t steps = 0;
  double h = 0.0;
  double end_error = 0.0;  // L2 norm at the final node
  Interval end_ci;
  double ci_halfwidth = 0.0;
  std::vector<double> node_error;  // L2 norm at each node of the coarsest grid
  double defect_max = 0.0;
  double defect_bound = 0.0;
};

struct CoupledRun {
  Algorithm algorithm = Algorithm::euler_maruyama;
  InitCoupling coupling = InitCoupling::shared;
  std::size_t replicates = 0;
  std::uint64_t seed = 0;
  double horizon = 0.0;
  double epsilon = 0.0;
  std::size_t reference_steps = 0;  // SDE only
  std::vector<LevelResult> levels;
};

namespace detail {

inline void draw_coupled_start(const TargetDistribution& target, InitCoupling coupling,
                               double horizon, std::uint64_t seed, std::size_t replicate,
                               std::span<double> reference, std::span<double> sampler) {
  rng::Stream stream(seed, rng::tag::init, replicate);
  const auto atom = target.point(pick_component(target, stream.uniform()));
  const double scale = std::sqrt(horizon + target.smoothing);
  for (std::size_t k = 0; k < target.dim; ++k) {
    const double g = scale * stream.normal();
    reference[k] = atom[k] + g;
    sampler[k] = coupling == InitCoupling::shared ? reference[k] : g;
  }
}

inline void finish_levels(CoupledRun& run, const std::vector<MeanSquareAccumulator>& acc,
                          std::size_t coarse_nodes) {
  for (std::size_t l = 0; l < run.levels.size(); ++l) {
    LevelResult& lr = run.levels[l];
    for (std::size_t n = 0; n < coarse_nodes; ++n) {
      lr.node_error.push_back(acc[l * coarse_nodes + n].l2());
    }
    const auto& end = acc[l * coarse_nodes + coarse_nodes - 1];
    lr.end_error = end.l2();
    lr.end_ci = end.l2_interval();
    lr.ci_halfwidth = 0.5 * (lr.end_ci.upper - lr.end_ci.lower);
  }
}

inline void attach_defects(CoupledRun& run, const TargetDistribution& target,
                           const CoupledOptions& options, std::uint64_t seed) {
  if (options.defect_replicates < 2) return;
  DefectOptions dopt;
  dopt.threads = options.threads;
  for (auto& lr : run.levels) {
    const TimeGrid grid(run.horizon, run.epsilon, lr.steps);
    // Final step (closest to the data, where the bounds are tightest) and a mid-path step.
    for (std::size_t n : {lr.steps - 1, lr.steps / 2}) {
      const auto est = one_step_defect(target, run.algorithm, grid, grid.node(n), lr.h,
                                       options.defect_replicates, seed + 7919 * (lr.level + 1) + n,
                                       dopt);
      lr.defect_max = std::max(lr.defect_max, est.value);
      lr.defect_bound = est.bound;
    }
  }
}

}  // namespace detail

/// Euler-Maruyama with the exact score at several step sizes, all driven by one Brownian
/// path realized on a reference grid 2^r times finer than the finest level. Coarse
/// increments are sums of the fine ones, and the reference is Euler-Maruyama on the fine grid.
inline CoupledRun coupled_strong_error_sde(const TargetDistribution& target, double horizon,
                                           double epsilon, const CoupledOptions& options,
                                           std::uint64_t seed) {
  require(options.levels >= 1 && options.base_steps >= 1, ErrorKind::invalid_input,
          "need at least one level and one step");
  require(options.replicates >= 2, ErrorKind::invalid_input, "need at least 2 replicates");
  const std::size_t d = target.dim;
  const std::size_t levels = options.levels;
  const std::size_t finest = options.base_steps << (levels - 1);
  const std::size_t ref_steps = finest << options.reference_factor_log2;
  const TimeGrid ref_grid(horizon, epsilon, ref_steps);
  const double h_ref = ref_grid.step();
  const double root_h_ref = std::sqrt(h_ref);
  std::vector<TimeGrid> grids;
  std::vector<std::size_t> ratio;
  for (std::size_t l = 0; l < levels; ++l) {
    grids.emplace_back(horizon, epsilon, options.base_steps << l);
    ratio.push_back(ref_steps / grids.back().steps());
  }
  const std::size_t coarse_nodes = options.base_steps + 1;
  const ScoreField exact = ScoreField::exact(std::make_shared<const TargetDistribution>(target));

  std::vector<MeanSquareAccumulator> acc(levels * coarse_nodes);
  ordered_blocks(
      options.replicates, levels * coarse_nodes, options.threads,
      [&](std::size_t i, std::span<double> row) {
        std::vector<double> ref(d), lvl(levels * d), incr(levels * d, 0.0), dw(d), s(d);
        detail::draw_coupled_start(target, options.coupling, horizon, seed, i, ref,
                                   std::span<double>(lvl.data(), d));
        for (std::size_t l = 1; l < levels; ++l) {
          std::copy(lvl.begin(), lvl.begin() + static_cast<std::ptrdiff_t>(d),
                    lvl.begin() + static_cast<std::ptrdiff_t>(l * d));
        }
        auto record = [&](std::size_t node) {
          for (std::size_t l = 0; l < levels; ++l) {
            double e2 = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
              const double diff = lvl[l * d + k] - ref[k];
              e2 += diff * diff;
            }
            row[l * coarse_nodes + node] = e2;
          }
        };
        record(0);
        rng::Stream stream(seed, rng::tag::step_noise, i);
        for (std::size_t j = 0; j < ref_steps; ++j) {
          for (std::size_t k = 0; k < d; ++k) dw[k] = root_h_ref * stream.normal();
          exact.evaluate(ref_grid.forward_time(j), ref, s);
          for (std::size_t k = 0; k < d; ++k) ref[k] += h_ref * s[k] + dw[k];
          if (escaped(ref)) throw DivergenceError(j + 1, i);
          for (std::size_t l = 0; l < levels; ++l) {
            for (std::size_t k = 0; k < d; ++k) incr[l * d + k] += dw[k];
            if ((j + 1) % ratio[l] != 0) continue;
            const std::size_t n = (j + 1) / ratio[l];
            std::span<double> x(lvl.data() + l * d, d);
            exact.evaluate(grids[l].forward_time(n - 1), x, s);
            const double h = grids[l].step();
            for (std::size_t k = 0; k < d; ++k) {
              x[k] += h * s[k] + incr[l * d + k];
              incr[l * d + k] = 0.0;
            }
            if (escaped(x)) throw DivergenceError(n, i);
          }
          if ((j + 1) % ratio[0] == 0) record((j + 1) / ratio[0]);
        }
      },
      [&](std::size_t, std::span<const double> row) {
        for (std::size_t j = 0; j < row.size(); ++j) acc[j].add(row[j]);
      });

  CoupledRun run;
  run.algorithm = Algorithm::euler_maruyama;
  run.coupling = options.coupling;
  run.replicates = options.replicates;
  run.seed = seed;
  run.horizon = horizon;
  run.epsilon = epsilon;
  run.reference_steps = ref_steps;
  for (std::size_t l = 0; l < levels; ++l) {
    LevelResult lr;
    lr.level = l;
    lr.steps = grids[l].steps();
    lr.h = grids[l].step();
    run.levels.push_back(lr);
  }
  detail::finish_levels(run, acc, coarse_nodes);
  detail::attach_defects(run, target, options, seed);
  return run;
}

/// Euler or Heun on the probability flow ODE at several step sizes against the exact flow
/// (reference_flow) from the same start.
inline CoupledRun coupled_strong_error_ode(const TargetDistribution& target, double horizon,
                                           double epsilon, Algorithm algorithm,
                                           const CoupledOptions& options, std::uint64_t seed) {
  require(algorithm != Algorithm::euler_maruyama, ErrorKind::invalid_input,
          "coupled_strong_error_ode takes euler-ode or heun");
  require(options.levels >= 1 && options.base_steps >= 1, ErrorKind::invalid_input,
          "need at least one level and one step");
  require(options.replicates >= 2, ErrorKind::invalid_input, "need at least 2 replicates");
  const std::size_t d = target.dim;
  const std::size_t levels = options.levels;
  const std::size_t coarse_nodes = options.base_steps + 1;
  const TimeGrid coarse(horizon, epsilon, options.base_steps);
  std::vector<double> node_times(coarse_nodes);
  for (std::size_t n = 0; n < coarse_nodes; ++n) node_times[n] = coarse.forward_time(n);
  const ScoreField exact = ScoreField::exact(std::make_shared<const TargetDistribution>(target));
  ReferenceOptions ref_opts;
  ref_opts.tolerance = options.reference_tolerance;

  std::vector<MeanSquareAccumulator> acc(levels * coarse_nodes);
  ordered_blocks(
      options.replicates, levels * coarse_nodes, options.threads,
      [&](std::size_t i, std::span<double> row) {
        std::vector<double> ref_start(d), start(d), path(coarse_nodes * d), x(d), no_noise(d, 0.0);
        detail::draw_coupled_start(target, options.coupling, horizon, seed, i, ref_start, start);
        reference_flow(target, node_times, ref_start, path, ref_opts);
        StepWorkspace ws(d);
        for (std::size_t l = 0; l < levels; ++l) {
          const TimeGrid grid(horizon, epsilon, options.base_steps << l);
          const std::size_t stride = std::size_t{1} << l;
          std::copy(start.begin(), start.end(), x.begin());
          auto record = [&](std::size_t node) {
            double e2 = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
              const double diff = x[k] - path[node * d + k];
              e2 += diff * diff;
            }
            row[l * coarse_nodes + node] = e2;
          };
          record(0);
          for (std::size_t n = 1; n <= grid.steps(); ++n) {
            sampler_step(algorithm, exact, grid.forward_time(n - 1), grid.forward_time(n),
                         grid.step(), x, no_noise, ws);
            if (escaped(x)) throw DivergenceError(n, i);
            if (n % stride == 0) record(n / stride);
          }
        }
      },
      [&](std::size_t, std::span<const double> row) {
        for (std::size_t j = 0; j < row.size(); ++j) acc[j].add(row[j]);
      });

  CoupledRun run;
  run.algorithm = algorithm;
  run.coupling = options.coupling;
  run.replicates = options.replicates;
  run.seed = seed;
  run.horizon = horizon;
  run.epsilon = epsilon;
  for (std::size_t l = 0; l < levels; ++l) {
    LevelResult lr;
    lr.level = l;
    lr.steps = options.base_steps << l;
    lr.h = TimeGrid(horizon, epsilon, lr.steps).step();
    run.levels.push_back(lr);
  }
  detail::finish_levels(run, acc, coarse_nodes);
  detail::attach_defects(run, target, options, seed);
  return run;
}

/// Per-level table with the stable column set used in reports.
inline CsvTable levels_table(const std::vector<CoupledRun>& runs) {
  CsvTable table({"algorithm", "h", "level", "end_error_L2", "ci_halfwidth", "defect_max",
                  "defect_bound"});
  for (const auto& run : runs) {
    for (const auto& lr : run.levels) {
      table.add_row({to_string(run.algorithm), format_number(lr.h), std::to_string(lr.level),
                     format_number(lr.end_error), format_number(lr.ci_halfwidth),
                     format_number(lr.defect_max), format_number(lr.defect_bound)});
    }
  }
  return table;
}

}  // namespace wassdiff
