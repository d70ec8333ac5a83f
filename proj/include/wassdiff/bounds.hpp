#pragma once

// Closed-form error bounds for the three samplers and their building blocks.
//
// Every function here is plain arithmetic on (d, R, T, eps, N, L, eps_score).
// Precondition violations never throw; they set precondition_ok = false so that
// sweeps across the validity edge still produce continuous curves.

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "numeric.hpp"
#include "score.hpp"
#include "target.hpp"

namespace wassdiff {

struct DiscretizationBounds {
  double ode = 0.0;   // Euler step on the probability flow ODE, order h^2
  double heun = 0.0;  // trapezoidal step, order h^3
  double sde = 0.0;   // Euler-Maruyama step with shared noise, order h^{3/2}
  bool precondition_ok = true;
};

inline DiscretizationBounds discretization_bounds(std::size_t d, double radius, double epsilon,
                                                  double h) {
  require(epsilon > 0.0, ErrorKind::invalid_input, "epsilon must be > 0");
  require(h >= 0.0, ErrorKind::invalid_input, "h must be >= 0");
  const double dd = static_cast<double>(d);
  const double q = radius / epsilon;
  DiscretizationBounds b;
  b.ode = std::sqrt(dd) * std::pow(radius, 3) / std::pow(epsilon, 3) * h * h;
  b.heun = 22.0 * dd * std::pow(radius, 5) / std::pow(epsilon, 5) * h * h * h;
  b.sde = std::sqrt(dd) * (2.0 / 3.0) * q * q * std::pow(h, 1.5);
  b.precondition_ok = epsilon <= radius * radius;
  return b;
}

inline double early_stopping_bound(std::size_t d, double epsilon) {
  require(epsilon >= 0.0, ErrorKind::invalid_input, "epsilon must be >= 0");
  return std::sqrt(static_cast<double>(d) * epsilon);
}

// ---------------------------------------------------------------------------
// Propagation products

enum class PropagationFlavor { ode_half_step, sde_full_step, heun };

struct PropagationResult {
  PropagationFlavor flavor = PropagationFlavor::ode_half_step;
  std::vector<double> products;        // index n = 0..N: product over m = n..N-1
  std::vector<double> product_bounds;  // closed-form bound for the same n
  double sum = 0.0;                    // h * sum_{k=1}^{N} products[k]
  double sum_bound = 0.0;
  double sum_squares = 0.0;  // sde flavor only
  double sum_squares_bound = 0.0;
  bool precondition_ok = true;
};

/// Exact per-step propagation constants and their closed-form bounds along a grid.
/// `lipschitz` is only used by the Heun flavor.
inline PropagationResult propagation_product(const TimeGrid& grid, double radius,
                                             PropagationFlavor flavor, double lipschitz = 0.0) {
  const std::size_t n_steps = grid.steps();
  const double h = grid.step();
  const double eps = grid.epsilon();
  const double horizon = grid.horizon();
  const double r2 = radius * radius;
  require(eps > 0.0, ErrorKind::invalid_input, "propagation bounds need epsilon > 0");

  PropagationResult out;
  out.flavor = flavor;
  out.products.assign(n_steps + 1, 1.0);
  out.product_bounds.assign(n_steps + 1, 0.0);

  auto factor = [&](std::size_t m) {
    switch (flavor) {
      case PropagationFlavor::ode_half_step:
        return step_lipschitz(radius, grid.forward_time(m), h / 2.0);
      case PropagationFlavor::sde_full_step:
        return step_lipschitz(radius, grid.forward_time(m), h);
      case PropagationFlavor::heun:
        return 0.5 * (step_lipschitz(radius, grid.forward_time(m), h / 2.0) +
                      step_lipschitz(radius, grid.forward_time(m + 1), h / 2.0)) +
               h * h * lipschitz * lipschitz / 8.0;
    }
    return 1.0;
  };
  for (std::size_t n = n_steps; n-- > 0;) out.products[n] = out.products[n + 1] * factor(n);

  switch (flavor) {
    case PropagationFlavor::ode_half_step: {
      out.precondition_ok = h <= eps;
      const double g = std::exp(r2 / (2.0 * eps));
      for (std::size_t n = 0; n <= n_steps; ++n) {
        out.product_bounds[n] = std::sqrt(2.0 * eps / grid.forward_time(n)) * g;
      }
      out.sum_bound = std::sqrt(8.0 * eps) * g * std::sqrt(horizon);
      break;
    }
    case PropagationFlavor::sde_full_step: {
      out.precondition_ok = h <= eps / 2.0;
      const double g = std::exp(r2 / eps);
      for (std::size_t n = 0; n <= n_steps; ++n) {
        out.product_bounds[n] = 2.0 * eps / grid.forward_time(n) * g;
      }
      out.sum_bound = 2.0 * eps * g * std::log(2.0 * horizon / eps);
      out.sum_squares_bound = 8.0 * eps * g * g;
      break;
    }
    case PropagationFlavor::heun: {
      out.precondition_ok = h <= eps / 2.0;
      const double g = std::exp(r2 / eps + h * horizon * lipschitz * lipschitz / 8.0);
      for (std::size_t n = 0; n <= n_steps; ++n) {
        out.product_bounds[n] = std::sqrt(2.0 * eps / grid.forward_time(n)) * g;
      }
      out.sum_bound = std::sqrt(8.0 * eps) * g * std::sqrt(horizon);
      break;
    }
  }
  CompensatedSum sum, squares;
  for (std::size_t k = 1; k <= n_steps; ++k) {
    sum += out.products[k];
    squares += out.products[k] * out.products[k];
  }
  out.sum = h * sum.value();
  if (flavor == PropagationFlavor::sde_full_step) out.sum_squares = h * squares.value();
  return out;
}

// ---------------------------------------------------------------------------
// Full bounds

enum class Proposition { euler_ode, heun, em, em_true_score };

inline const char* equation_tag(Proposition p) {
  switch (p) {
    case Proposition::euler_ode: return "prop5";
    case Proposition::heun: return "prop6";
    case Proposition::em: return "prop7";
    case Proposition::em_true_score: return "prop8";
  }
  return "unknown";
}

struct BoundInputs {
  std::size_t d = 1;
  double radius = 1.0;
  double horizon = 10.0;  // T
  double epsilon = 0.5;   // early-stopping time, or tau for the no-early-stop variants
  std::size_t steps = 100;
  double lipschitz = -1.0;  // Heun only; negative selects the default R^2 / eps^2

  /// eps_score as a function of forward time. Empty means the uniform bound eps_bar.
  std::function<double(double)> score_error;
  double eps_bar = 0.0;
  bool uniform_shortcut = false;  // use the closed-form uniform-eps_bar score term

  bool crude_init = false;        // use the ||X||_{L2}-based init term (valid for every T)
  bool zero_mean = true;          // mean-zero target (needed for the asymptotic init term)
  double init_threshold = 0.0;    // calibrated T past which the asymptotic init term holds

  double step() const { return (horizon - epsilon) / static_cast<double>(steps); }
  double score_error_at(double t) const { return score_error ? score_error(t) : eps_bar; }
};

struct BoundReport {
  std::string equation;
  double early_stopping = 0.0;
  double init_propagated = 0.0;
  double init_asymptotic = 0.0;  // always computed, for reference
  double init_crude = 0.0;       // always computed, for reference
  bool init_is_crude = false;
  double discretization_propagated = 0.0;
  double score_propagated = 0.0;
  double score_uniform_shortcut = 0.0;  // closed form with eps_bar, when no series is given
  double total = 0.0;
  double h = 0.0;
  double lipschitz = 0.0;
  bool precondition_ok = true;
  std::vector<std::string> violations;
};

namespace detail {

// The no-early-stop variants are the early-stopped formulas applied to Z with
// epsilon -> tau and horizon -> T + tau. `frame_horizon` is that horizon, `shift`
// converts the frame's forward time back to the caller's eps_score argument.
struct Frame {
  double e;              // epsilon or tau
  double frame_horizon;  // T or T + tau
  double shift;          // 0 or tau
  double h;
  std::size_t n;
  bool early_stop;
};

inline void flag(BoundReport& r, bool ok, const std::string& why) {
  if (!ok) {
    r.precondition_ok = false;
    r.violations.push_back(why);
  }
}

inline BoundReport evaluate_bound(Proposition prop, const BoundInputs& in, const Frame& f) {
  require(in.radius >= 0.0 && f.e > 0.0 && in.horizon > 0.0 && f.n >= 1,
          ErrorKind::invalid_input, "bound inputs must satisfy R >= 0, eps > 0, T > 0, N >= 1");
  BoundReport r;
  r.equation = std::string(equation_tag(prop)) + (f.early_stop ? "" : "+no-early-stop");
  r.h = f.h;
  const double dd = static_cast<double>(in.d);
  const double sd = std::sqrt(dd);
  const double R = in.radius;
  const double r2 = R * R;
  const double e = f.e;
  const double H = f.frame_horizon;
  const double h = f.h;
  const std::string eps_name = f.early_stop ? "epsilon" : "tau";

  r.early_stopping = f.early_stop ? early_stopping_bound(in.d, e) : 0.0;
  flag(r, e <= r2, eps_name + " <= R^2");
  if (prop == Proposition::euler_ode) {
    flag(r, h <= e, "h <= " + eps_name);
  } else {
    flag(r, h <= e / 2.0, "h <= " + eps_name + "/2");
  }
  if (!in.crude_init) {
    flag(r, in.zero_mean, "asymptotic init term needs a zero-mean target");
    flag(r, in.horizon >= in.init_threshold, "T below the calibrated init threshold");
  }
  r.init_is_crude = in.crude_init || !in.zero_mean;

  // Score sums over the grid, in the frame's forward time.
  auto eps_score = [&](double frame_time) { return in.score_error_at(frame_time - f.shift); };
  CompensatedSum next_over_sqrt, here_over_sqrt, next_over_lin;
  for (std::size_t k = 0; k < f.n; ++k) {
    const double at_k = e + h * static_cast<double>(k);
    const double at_next = e + h * static_cast<double>(k + 1);
    next_over_sqrt += eps_score(at_next) / std::sqrt(at_k);
    here_over_sqrt += eps_score(at_k) / std::sqrt(at_k);
    next_over_lin += eps_score(at_next) / at_k;
  }

  switch (prop) {
    case Proposition::euler_ode: {
      const double g = std::exp(r2 / (2.0 * e));
      r.init_asymptotic = std::sqrt(2.0 * e) / H * g * r2;
      r.init_crude = std::sqrt(2.0 * e / H) * g * R;
      r.discretization_propagated = sd * std::sqrt(2.0) * R * r2 / std::pow(e, 2.5) * g *
                                    std::sqrt(H) * h;
      r.score_propagated = std::sqrt(e / 2.0) * g * h * next_over_sqrt.value();
      r.score_uniform_shortcut = std::sqrt(2.0 * e) * g * in.eps_bar * std::sqrt(H);
      break;
    }
    case Proposition::heun: {
      const double L = in.lipschitz >= 0.0 ? in.lipschitz : r2 / (e * e);
      r.lipschitz = L;
      const double g = std::exp(r2 / e + h * H * L * L / 8.0);
      r.init_asymptotic = std::sqrt(2.0 * e) / H * g * r2;
      r.init_crude = std::sqrt(2.0 * e / H) * g * R;
      r.discretization_propagated =
          (22.0 * dd * std::sqrt(2.0) * std::pow(R, 5) / std::pow(e, 4.5) +
           sd * L * R * r2 / (2.0 * std::sqrt(2.0) * std::pow(e, 2.5))) *
          g * std::sqrt(H) * h * h;
      r.score_propagated = std::sqrt(e) / (2.0 * std::sqrt(2.0)) * g *
                           (h * here_over_sqrt.value() +
                            (1.0 + h * L / 2.0) * h * next_over_sqrt.value());
      r.score_uniform_shortcut =
          std::sqrt(e / 2.0) * g * (2.0 + h * L / 2.0) * in.eps_bar * std::sqrt(H);
      break;
    }
    case Proposition::em:
    case Proposition::em_true_score: {
      const double g = std::exp(r2 / e);
      r.init_asymptotic = 2.0 * e / std::pow(H, 1.5) * g * r2;
      r.init_crude = 2.0 * e / H * g * R;
      if (prop == Proposition::em) {
        r.discretization_propagated =
            sd * (4.0 / 3.0) * r2 / e * g * std::log(2.0 * H / e) * std::sqrt(h);
        r.score_propagated = 2.0 * e * g * h * next_over_lin.value();
        r.score_uniform_shortcut = 2.0 * e * g * std::log(2.0 * H / e) * in.eps_bar;
      } else {
        r.discretization_propagated =
            sd * (4.0 * std::sqrt(2.0) / 3.0) * r2 / std::pow(e, 1.5) * g * h;
      }
      break;
    }
  }
  if (in.uniform_shortcut && prop != Proposition::em_true_score) {
    r.score_propagated = r.score_uniform_shortcut;
  }
  r.init_propagated = r.init_is_crude ? r.init_crude : r.init_asymptotic;
  r.total = r.early_stopping + r.init_propagated + r.discretization_propagated + r.score_propagated;
  return r;
}

inline Frame early_stopped_frame(const BoundInputs& in) {
  require(in.epsilon > 0.0 && in.epsilon < in.horizon, ErrorKind::invalid_input,
          "need 0 < epsilon < T");
  return {in.epsilon, in.horizon, 0.0, in.step(), in.steps, true};
}

}  // namespace detail

inline BoundReport bound_euler_ode(const BoundInputs& in) {
  return detail::evaluate_bound(Proposition::euler_ode, in, detail::early_stopped_frame(in));
}

inline BoundReport bound_heun(const BoundInputs& in) {
  return detail::evaluate_bound(Proposition::heun, in, detail::early_stopped_frame(in));
}

inline BoundReport bound_em(const BoundInputs& in) {
  return detail::evaluate_bound(Proposition::em, in, detail::early_stopped_frame(in));
}

inline BoundReport bound_em_true_score(const BoundInputs& in) {
  return detail::evaluate_bound(Proposition::em_true_score, in, detail::early_stopped_frame(in));
}

/// Smoothed-target variants: `in.epsilon` holds tau, the sampler runs to time 0 on the
/// horizon T with h = T / N, and eps_score is indexed by the sampler's own forward time.
inline BoundReport bound_no_early_stopping(Proposition variant, const BoundInputs& in) {
  require(in.epsilon > 0.0, ErrorKind::invalid_input, "tau must be > 0");
  require(in.horizon > 0.0 && in.steps >= 1, ErrorKind::invalid_input, "need T > 0, N >= 1");
  const double tau = in.epsilon;
  const detail::Frame frame{tau, in.horizon + tau, tau,
                            in.horizon / static_cast<double>(in.steps), in.steps, false};
  return detail::evaluate_bound(variant, in, frame);
}

inline BoundReport bound_for(Proposition p, const BoundInputs& in) {
  switch (p) {
    case Proposition::euler_ode: return bound_euler_ode(in);
    case Proposition::heun: return bound_heun(in);
    case Proposition::em: return bound_em(in);
    case Proposition::em_true_score: return bound_em_true_score(in);
  }
  return {};
}

inline nlohmann::json to_json(const BoundReport& r) {
  return {
      {"equation", r.equation},
      {"terms",
       {{"early_stopping", r.early_stopping},
        {"init_propagated", r.init_propagated},
        {"discretization_propagated", r.discretization_propagated},
        {"score_propagated", r.score_propagated}}},
      {"init_variants", {{"asymptotic", r.init_asymptotic}, {"crude", r.init_crude},
                         {"selected", r.init_is_crude ? "crude" : "asymptotic"}}},
      {"score_uniform_shortcut", r.score_uniform_shortcut},
      {"total", r.total},
      {"h", r.h},
      {"lipschitz", r.lipschitz},
      {"precondition_ok", r.precondition_ok},
      {"violations", r.violations},
  };
}

// ---------------------------------------------------------------------------
// Rate fitting

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Least squares of log(error) on log(h).
inline RateFit fit_rate(const std::vector<double>& hs, const std::vector<double>& errors) {
  require(hs.size() == errors.size(), ErrorKind::invalid_input, "length mismatch");
  require(hs.size() >= 3, ErrorKind::invalid_input, "need at least 3 points");
  const double n = static_cast<double>(hs.size());
  double mx = 0.0, my = 0.0;
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < hs.size(); ++i) {
    require(hs[i] > 0.0 && std::isfinite(hs[i]), ErrorKind::invalid_input, "step sizes must be > 0");
    require(errors[i] > 0.0 && std::isfinite(errors[i]), ErrorKind::invalid_input,
            "errors must be positive and finite");
    lx.push_back(std::log(hs[i]));
    ly.push_back(std::log(errors[i]));
    mx += lx.back();
    my += ly.back();
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  require(sxx > 0.0, ErrorKind::invalid_input, "step sizes must not all be equal");
  RateFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return fit;
}

}  // namespace wassdiff
