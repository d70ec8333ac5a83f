#pragma once

// Closed-form scores of Dirac-mixture targets and their perturbations.
//
// For X_t = X + B_t, grad log p_t(x) = (E[X | X_t = x] - x) / t and
// Hess log p_t(x) = -I / t + cov(X | X_t = x) / t^2. Smoothed targets are queried at t + tau.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "error.hpp"
#include "numeric.hpp"
#include "rng.hpp"
#include "target.hpp"

namespace wassdiff {

/// Bandlimited sinusoidal score corruption: c sin(w <u_n, x> + phi_n) v_n per time node n.
struct Corruption {
  double magnitude = 0.0;  // c, pointwise L2 bound of the addend
  double frequency = 1.0;  // w, addend Lipschitz constant is c * w
  double horizon = 1.0;
  double epsilon = 0.0;
  std::size_t steps = 1;
  std::vector<double> u;      // (steps + 1) x d unit vectors
  std::vector<double> v;      // (steps + 1) x d unit vectors
  std::vector<double> phase;  // steps + 1

  double lipschitz() const { return magnitude * frequency; }

  /// Nearest grid node for a forward time s (node n sits at forward time T - t_n).
  std::size_t node_for(double s) const {
    const double h = (horizon - epsilon) / static_cast<double>(steps);
    const double n = std::round((horizon - s) / h);
    if (!(n > 0.0)) return 0;
    return std::min(steps, static_cast<std::size_t>(n));
  }
};

class ScoreField {
 public:
  enum class Kind { exact, quadratic, corrupted };

  static ScoreField exact(std::shared_ptr<const TargetDistribution> target) {
    return ScoreField(std::move(target), Kind::exact);
  }

  /// grad log p_t(x) + alpha |x| x; globally non-Lipschitz for alpha > 0.
  static ScoreField quadratic(std::shared_ptr<const TargetDistribution> target, double alpha) {
    require(alpha >= 0.0, ErrorKind::invalid_input, "alpha must be >= 0");
    ScoreField field(std::move(target), Kind::quadratic);
    field.alpha_ = alpha;
    return field;
  }

  static ScoreField corrupted(std::shared_ptr<const TargetDistribution> target,
                              Corruption corruption) {
    ScoreField field(std::move(target), Kind::corrupted);
    field.corruption_ = std::make_shared<const Corruption>(std::move(corruption));
    return field;
  }

  Kind kind() const { return kind_; }
  const TargetDistribution& target() const { return *target_; }
  std::shared_ptr<const TargetDistribution> target_ptr() const { return target_; }
  std::size_t dim() const { return target_->dim; }
  double alpha() const { return alpha_; }
  double sign() const { return sign_; }
  const Corruption* corruption() const { return corruption_.get(); }

  /// The same field multiplied by -1.
  ScoreField negated() const {
    ScoreField copy = *this;
    copy.sign_ = -sign_;
    return copy;
  }

  /// Writes s(t, x) into `out` (size d). Allocation-free.
  void evaluate(double t, std::span<const double> x, std::span<double> out) const {
    const TargetDistribution& target = *target_;
    for (double xi : x) {
      if (!std::isfinite(xi)) throw Error(ErrorKind::invalid_input, "non-finite x in score");
    }
    const double s = checked_effective_time(target, t);
    posterior_mean(target, s, x, out);
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = (out[k] - x[k]) / s;
    add_perturbation(t, x, out);
    if (sign_ != 1.0) {
      for (double& o : out) o *= sign_;
    }
  }

  std::vector<double> operator()(double t, std::span<const double> x) const {
    std::vector<double> out(x.size());
    evaluate(t, x, out);
    return out;
  }

  /// Adds the non-exact part of the field (zero for Kind::exact) to `out`.
  void add_perturbation(double t, std::span<const double> x, std::span<double> out) const {
    switch (kind_) {
      case Kind::exact:
        return;
      case Kind::quadratic: {
        const double r = norm(x);
        for (std::size_t k = 0; k < x.size(); ++k) out[k] += alpha_ * r * x[k];
        return;
      }
      case Kind::corrupted: {
        const Corruption& c = *corruption_;
        const std::size_t n = c.node_for(t);
        const std::size_t d = x.size();
        double proj = 0.0;
        for (std::size_t k = 0; k < d; ++k) proj += c.u[n * d + k] * x[k];
        const double amp = c.magnitude * std::sin(c.frequency * proj + c.phase[n]);
        for (std::size_t k = 0; k < d; ++k) out[k] += amp * c.v[n * d + k];
        return;
      }
    }
  }

 private:
  ScoreField(std::shared_ptr<const TargetDistribution> target, Kind kind)
      : target_(std::move(target)), kind_(kind) {
    require(target_ != nullptr, ErrorKind::invalid_input, "score field needs a target");
  }

  std::shared_ptr<const TargetDistribution> target_;
  Kind kind_;
  double alpha_ = 0.0;
  double sign_ = 1.0;
  std::shared_ptr<const Corruption> corruption_;
};

/// Exact score grad log p_t(x), effective time t + tau.
inline std::vector<double> score(const TargetDistribution& target, double t,
                                 std::span<const double> x) {
  require(x.size() == target.dim, ErrorKind::invalid_input, "dimension mismatch");
  require(all_finite(x), ErrorKind::invalid_input, "non-finite x in score");
  const double s = checked_effective_time(target, t);
  std::vector<double> out(target.dim);
  posterior_mean(target, s, x, out);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = (out[k] - x[k]) / s;
  return out;
}

inline std::vector<double> score(const ScoreField& field, double t, std::span<const double> x) {
  require(x.size() == field.dim(), ErrorKind::invalid_input, "dimension mismatch");
  return field(t, x);
}

/// Hess log p_t(x) = -I / s + cov(X | X_s = x) / s^2 with s = t + tau.
inline Eigen::MatrixXd hessian(const TargetDistribution& target, double t,
                               std::span<const double> x) {
  require(all_finite(x), ErrorKind::invalid_input, "non-finite x in hessian");
  const double s = checked_effective_time(target, t);
  const auto moments = conditional_moments(target, t, x, 2);
  Eigen::MatrixXd h = moments.covariance / (s * s);
  h.diagonal().array() -= 1.0 / s;
  return 0.5 * (h + h.transpose());
}

/// d^k/dx^k log p_t(x) for k in {3, 4, 5}, d = 1, from posterior raw moments.
inline double spatial_derivatives_1d(const TargetDistribution& target, double t, double x,
                                     int order) {
  require(target.dim == 1, ErrorKind::unsupported_dimension,
          "higher spatial derivatives are implemented for d = 1 only");
  require(order >= 3 && order <= 5, ErrorKind::invalid_input, "order must be 3, 4 or 5");
  const double s = checked_effective_time(target, t);
  const std::array<double, 1> xs{x};
  const auto m = conditional_moments(target, t, xs, order).raw_1d;
  const double m1 = m[1];
  const double m2 = m[2];
  const double m3 = m[3];
  switch (order) {
    case 3:
      return (m3 - 3.0 * m2 * m1 + 2.0 * m1 * m1 * m1) / (s * s * s);
    case 4: {
      const double m4 = m[4];
      return (m4 - 4.0 * m3 * m1 - 3.0 * m2 * m2 + 12.0 * m2 * m1 * m1 - 6.0 * std::pow(m1, 4)) /
             std::pow(s, 4);
    }
    default: {
      const double m4 = m[4];
      const double m5 = m[5];
      return (m5 - 5.0 * m4 * m1 - 10.0 * m3 * m2 + 20.0 * m3 * m1 * m1 + 30.0 * m2 * m2 * m1 -
              60.0 * m2 * std::pow(m1, 3) + 24.0 * std::pow(m1, 5)) /
             std::pow(s, 5);
    }
  }
}

/// Spectral envelope of the score Hessian and the Lipschitz constant of x -> x + h grad log p_t.
struct RegularityEnvelope {
  double t = 0.0;
  double h = 0.0;
  double radius = 0.0;
  double lower_eig = 0.0;
  double upper_eig = 0.0;
  double operator_bound = 0.0;  // C_t
  double lipschitz = 0.0;       // L_{t,h}
  bool contractive = false;
};

inline RegularityEnvelope regularity_envelope(double radius, double t, double h) {
  require(t > 0.0, ErrorKind::singular_time, "t must be > 0");
  require(h >= 0.0, ErrorKind::invalid_input, "h must be >= 0");
  RegularityEnvelope env;
  env.t = t;
  env.h = h;
  env.radius = radius;
  const double r2 = radius * radius;
  env.lower_eig = -1.0 / t;
  env.upper_eig = -1.0 / t + r2 / (t * t);
  env.operator_bound = std::max(1.0 / t, std::abs(r2 / (t * t) - 1.0 / t));
  env.lipschitz = 1.0 + h * (r2 / (t * t) - 1.0 / t);
  env.contractive = env.lipschitz < 1.0;
  return env;
}

/// Lipschitz constant of x -> x + h grad log p_t(x); shorthand for regularity_envelope(...).lipschitz.
inline double step_lipschitz(double radius, double t, double h) {
  const double r2 = radius * radius;
  return 1.0 + h * (r2 / (t * t) - 1.0 / t);
}

inline constexpr double kMinCorruptionFrequency = 1e-3;

/// Exact score plus a sinusoidal addend whose pointwise norm is <= eps_bar and whose
/// Lipschitz constant is <= lipschitz_budget.
inline ScoreField make_corrupted_field(std::shared_ptr<const TargetDistribution> target,
                                       double eps_bar, double lipschitz_budget,
                                       const TimeGrid& grid, std::uint64_t seed) {
  require(eps_bar >= 0.0, ErrorKind::invalid_input, "L2 budget must be >= 0");
  require(lipschitz_budget >= 0.0, ErrorKind::invalid_input, "Lipschitz budget must be >= 0");
  if (eps_bar == 0.0) return ScoreField::exact(std::move(target));
  const double frequency = lipschitz_budget / eps_bar;
  if (frequency < kMinCorruptionFrequency) {
    throw Error(ErrorKind::infeasible_budget,
                "magnitude * minimum frequency exceeds the Lipschitz budget");
  }
  Corruption c;
  c.magnitude = eps_bar;
  c.frequency = frequency;
  c.horizon = grid.horizon();
  c.epsilon = grid.epsilon();
  c.steps = grid.steps();
  const std::size_t d = target->dim;
  auto unit = [d](rng::Stream& stream, std::vector<double>& dst) {
    std::vector<double> g(d);
    double r = 0.0;
    while (r < 1e-12) {
      for (double& gi : g) gi = stream.normal();
      r = norm(g);
    }
    for (double gi : g) dst.push_back(gi / r);
  };
  for (std::size_t n = 0; n <= grid.steps(); ++n) {
    rng::Stream stream(seed, rng::tag::corruption, n);
    unit(stream, c.u);
    unit(stream, c.v);
    c.phase.push_back(2.0 * std::numbers::pi * stream.uniform());
  }
  return ScoreField::corrupted(std::move(target), std::move(c));
}

struct ScoreErrorEstimate {
  double value = 0.0;  // RMS of |s(t, X_t) - grad log p_t(X_t)|
  Interval ci;
  std::size_t n = 0;
  bool blowup = false;
};

/// Monte Carlo estimate of eps_score(t) = || grad log p_t(X_t) - s(t, X_t) ||_{L2}.
inline ScoreErrorEstimate measure_score_error(const ScoreField& field, double t, std::size_t n,
                                              std::uint64_t seed) {
  require(n >= 100, ErrorKind::invalid_input, "n must be >= 100");
  const TargetDistribution& target = field.target();
  const SampleBatch xs = forward_marginal_sample(target, t, n, seed);
  MeanSquareAccumulator acc;
  ScoreErrorEstimate out;
  out.n = n;
  std::vector<double> a(target.dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = xs.row(i);
    field.evaluate(t, x, a);
    const auto exact_value = score(target, t, x);
    double d2 = 0.0;
    for (std::size_t k = 0; k < target.dim; ++k) {
      const double diff = a[k] - exact_value[k];
      d2 += diff * diff;
    }
    if (!std::isfinite(d2)) {
      out.blowup = true;
      out.value = std::numeric_limits<double>::infinity();
      out.ci = {out.value, out.value};
      return out;
    }
    acc.add(d2);
  }
  out.value = acc.l2();
  out.ci = acc.l2_interval();
  return out;
}

}  // namespace wassdiff
