#pragma once

// Bounded-support targets (finite Dirac mixtures, optionally Gaussian-smoothed),
// the heat-equation forward process X_t = X + B_t, and posterior moments E[X^k | X_t = x].

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "numeric.hpp"
#include "rng.hpp"

namespace wassdiff {

/// Weighted Dirac mixture in R^d with support radius R and smoothing variance tau.
/// With tau > 0 the distribution is Z + N(0, tau I), Z the mixture.
struct TargetDistribution {
  std::size_t dim = 1;
  std::vector<double> points;  // row-major, size() x dim
  std::vector<double> weights;
  std::vector<double> log_weights;
  std::vector<double> cumulative;  // for sampling
  double radius = 0.0;
  double smoothing = 0.0;

  std::size_t size() const { return weights.size(); }
  std::span<const double> point(std::size_t i) const {
    return {points.data() + i * dim, dim};
  }

  /// Time at which the smoothed target's forward process is queried: t + tau.
  double effective_time(double t) const { return t + smoothing; }
};

class TimeGrid {
 public:
  TimeGrid(double horizon, double epsilon, std::size_t steps)
      : horizon_(horizon), epsilon_(epsilon), steps_(steps) {
    require(horizon > 0.0 && std::isfinite(horizon), ErrorKind::invalid_input, "T must be > 0");
    require(epsilon >= 0.0 && epsilon < horizon, ErrorKind::invalid_input,
            "epsilon must satisfy 0 <= epsilon < T");
    require(steps >= 1, ErrorKind::invalid_input, "N must be >= 1");
  }

  double horizon() const { return horizon_; }
  double epsilon() const { return epsilon_; }
  std::size_t steps() const { return steps_; }
  double step() const { return (horizon_ - epsilon_) / static_cast<double>(steps_); }

  /// Reverse-time node t_n = n (T - epsilon) / N, with t_N = T - epsilon exactly.
  double node(std::size_t n) const {
    if (n >= steps_) return horizon_ - epsilon_;
    return static_cast<double>(n) * (horizon_ - epsilon_) / static_cast<double>(steps_);
  }

  /// Forward (noising) time T - t_n at node n.
  double forward_time(std::size_t n) const { return horizon_ - node(n); }

  TimeGrid refined(std::size_t factor) const { return {horizon_, epsilon_, steps_ * factor}; }

 private:
  double horizon_;
  double epsilon_;
  std::size_t steps_;
};

struct SampleBatch {
  std::size_t dim = 1;
  std::vector<double> data;  // row-major, size() x dim
  std::uint64_t seed = 0;
  double time_label = 0.0;
  bool has_blowup_sentinels = false;

  std::size_t size() const { return dim ? data.size() / dim : 0; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
  std::span<double> row(std::size_t i) { return {data.data() + i * dim, dim}; }
};

inline TargetDistribution make_dirac_mixture(std::size_t dim, std::vector<double> flat_points,
                                             std::vector<double> weights, double smoothing = 0.0) {
  require(dim >= 1, ErrorKind::invalid_input, "dimension must be >= 1");
  require(!weights.empty(), ErrorKind::invalid_input, "empty point list");
  require(flat_points.size() == weights.size() * dim, ErrorKind::invalid_input,
          "points and weights have different lengths");
  require(smoothing >= 0.0 && std::isfinite(smoothing), ErrorKind::invalid_input,
          "smoothing must be finite and >= 0");
  double total = 0.0;
  for (double w : weights) {
    require(w >= 0.0 && std::isfinite(w), ErrorKind::invalid_input, "negative weight");
    total += w;
  }
  require(total > 0.0, ErrorKind::invalid_input, "all weights are zero");
  require(all_finite(flat_points), ErrorKind::invalid_input, "non-finite point coordinate");

  TargetDistribution target;
  target.dim = dim;
  target.points = std::move(flat_points);
  target.weights = std::move(weights);
  target.smoothing = smoothing;
  double acc = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    target.weights[i] /= total;
    target.log_weights.push_back(target.weights[i] > 0.0
                                     ? std::log(target.weights[i])
                                     : -std::numeric_limits<double>::infinity());
    acc += target.weights[i];
    target.cumulative.push_back(acc);
    target.radius = std::max(target.radius, norm(target.point(i)));
  }
  target.cumulative.back() = 1.0;
  return target;
}

inline TargetDistribution make_dirac_mixture(const std::vector<std::vector<double>>& points,
                                             std::vector<double> weights, double smoothing) {
  require(!points.empty(), ErrorKind::invalid_input, "empty point list");
  const std::size_t dim = points.front().size();
  std::vector<double> flat;
  for (const auto& p : points) {
    require(p.size() == dim, ErrorKind::invalid_input, "points have inconsistent dimension");
    flat.insert(flat.end(), p.begin(), p.end());
  }
  return make_dirac_mixture(dim, std::move(flat), std::move(weights), smoothing);
}

/// Two equal-weight atoms at -R and +R in one dimension.
inline TargetDistribution two_dirac(double radius, double smoothing = 0.0) {
  return make_dirac_mixture(1, {-radius, radius}, {0.5, 0.5}, smoothing);
}

namespace detail {

inline std::size_t pick_component(const TargetDistribution& target, double u) {
  const auto it = std::lower_bound(target.cumulative.begin(), target.cumulative.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - target.cumulative.begin()),
                               target.size() - 1);
}

inline SampleBatch draw_noised(const TargetDistribution& target, double variance, std::size_t n,
                               std::uint64_t seed, std::string_view purpose, double label) {
  SampleBatch batch;
  batch.dim = target.dim;
  batch.data.resize(n * target.dim);
  batch.seed = seed;
  batch.time_label = label;
  const double scale = std::sqrt(variance);
  for (std::size_t i = 0; i < n; ++i) {
    rng::Stream stream(seed, purpose, i);
    const auto p = target.point(pick_component(target, stream.uniform()));
    auto out = batch.row(i);
    for (std::size_t k = 0; k < target.dim; ++k) {
      out[k] = p[k] + (scale > 0.0 ? scale * stream.normal() : 0.0);
    }
  }
  return batch;
}

}  // namespace detail

/// i.i.d. draws of X: a mixture atom plus N(0, tau I).
inline SampleBatch sample_target(const TargetDistribution& target, std::size_t n,
                                 std::uint64_t seed) {
  require(n >= 1, ErrorKind::invalid_input, "n must be >= 1");
  return detail::draw_noised(target, target.smoothing, n, seed, rng::tag::target, 0.0);
}

/// i.i.d. draws of X_t = X + B_t, i.e. atom + sqrt(tau + t) N(0, I).
inline SampleBatch forward_marginal_sample(const TargetDistribution& target, double t,
                                           std::size_t n, std::uint64_t seed) {
  require(t >= 0.0, ErrorKind::invalid_input, "t must be >= 0");
  require(n >= 1, ErrorKind::invalid_input, "n must be >= 1");
  return detail::draw_noised(target, target.effective_time(t), n, seed, rng::tag::forward, t);
}

/// Draws from N(0, variance I) in `dim` dimensions.
inline SampleBatch sample_gaussian(std::size_t dim, double variance, std::size_t n,
                                   std::uint64_t seed) {
  SampleBatch batch;
  batch.dim = dim;
  batch.seed = seed;
  batch.data.resize(n * dim);
  const double scale = std::sqrt(variance);
  for (std::size_t i = 0; i < n; ++i) {
    rng::Stream stream(seed, rng::tag::gaussian, i);
    for (std::size_t k = 0; k < dim; ++k) batch.data[i * dim + k] = scale * stream.normal();
  }
  return batch;
}

inline double checked_effective_time(const TargetDistribution& target, double t) {
  const double s = target.effective_time(t);
  if (!(s > 0.0 && std::isfinite(s))) {
    throw Error(ErrorKind::singular_time, "t + tau must be > 0 (got " + std::to_string(s) + ")");
  }
  return s;
}

/// Logit of atom i given X_s = x: log w_i - |x - x_i|^2 / (2 s).
inline double posterior_logit(const TargetDistribution& target, std::size_t i, double s,
                              std::span<const double> x) {
  const auto p = target.point(i);
  double d2 = 0.0;
  for (std::size_t k = 0; k < target.dim; ++k) {
    const double diff = x[k] - p[k];
    d2 += diff * diff;
  }
  return target.log_weights[i] - d2 / (2.0 * s);
}

/// Posterior atom weights gamma_i at time t (effective t + tau), via log-sum-exp.
inline std::vector<double> posterior_weights(const TargetDistribution& target, double t,
                                             std::span<const double> x) {
  const double s = checked_effective_time(target, t);
  std::vector<double> gamma(target.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < target.size(); ++i) {
    gamma[i] = posterior_logit(target, i, s, x);
    top = std::max(top, gamma[i]);
  }
  double total = 0.0;
  for (double& g : gamma) {
    g = std::exp(g - top);
    total += g;
  }
  for (double& g : gamma) g /= total;
  return gamma;
}

/// E[X | X_t = x] written into `out` without allocating (single-pass online softmax).
inline void posterior_mean(const TargetDistribution& target, double s, std::span<const double> x,
                           std::span<double> out) {
  const std::size_t d = target.dim;
  double top = -std::numeric_limits<double>::infinity();
  double total = 0.0;
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double logit = posterior_logit(target, i, s, x);
    if (logit == -std::numeric_limits<double>::infinity()) continue;
    const auto p = target.point(i);
    if (logit > top) {
      const double rescale = std::exp(top - logit);
      total = total * rescale + 1.0;
      for (std::size_t k = 0; k < d; ++k) out[k] = out[k] * rescale + p[k];
      top = logit;
    } else {
      const double w = std::exp(logit - top);
      total += w;
      for (std::size_t k = 0; k < d; ++k) out[k] += w * p[k];
    }
  }
  for (std::size_t k = 0; k < d; ++k) out[k] /= total;
}

struct ConditionalMoments {
  std::vector<double> gamma;
  std::vector<double> mean;      // E[X | X_t = x]
  Eigen::MatrixXd second;        // E[X X^T | X_t = x], when max_order >= 2
  Eigen::MatrixXd covariance;    // cov(X | X_t = x), when max_order >= 2
  std::vector<double> raw_1d;    // E[X^j | X_t = x], j = 0..max_order, only for d = 1
};

/// Posterior weights and conditional moments up to `max_order` (tensor orders > 2 need d = 1).
inline ConditionalMoments conditional_moments(const TargetDistribution& target, double t,
                                              std::span<const double> x, int max_order) {
  require(max_order >= 1, ErrorKind::invalid_input, "max_order must be >= 1");
  require(x.size() == target.dim, ErrorKind::invalid_input, "dimension mismatch");
  require(max_order <= 2 || target.dim == 1, ErrorKind::unsupported_dimension,
          "moments above order 2 are only available for d = 1");
  ConditionalMoments out;
  out.gamma = posterior_weights(target, t, x);
  const std::size_t d = target.dim;
  out.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto p = target.point(i);
    for (std::size_t k = 0; k < d; ++k) out.mean[k] += out.gamma[i] * p[k];
  }
  if (max_order >= 2) {
    out.second = Eigen::MatrixXd::Zero(d, d);
    out.covariance = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t i = 0; i < target.size(); ++i) {
      const auto p = target.point(i);
      for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) {
          out.second(a, b) += out.gamma[i] * p[a] * p[b];
          out.covariance(a, b) += out.gamma[i] * (p[a] - out.mean[a]) * (p[b] - out.mean[b]);
        }
      }
    }
  }
  if (d == 1) {
    out.raw_1d.assign(static_cast<std::size_t>(max_order) + 1, 0.0);
    for (std::size_t i = 0; i < target.size(); ++i) {
      double power = 1.0;
      for (int j = 0; j <= max_order; ++j) {
        out.raw_1d[static_cast<std::size_t>(j)] += out.gamma[i] * power;
        power *= target.points[i];
      }
    }
  }
  return out;
}

/// log p_t(x) of the forward marginal (effective time t + tau), via log-sum-exp.
inline double log_density(const TargetDistribution& target, double t, std::span<const double> x) {
  const double s = checked_effective_time(target, t);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < target.size(); ++i) {
    top = std::max(top, posterior_logit(target, i, s, x));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    total += std::exp(posterior_logit(target, i, s, x) - top);
  }
  return top + std::log(total) -
         0.5 * static_cast<double>(target.dim) * std::log(2.0 * std::numbers::pi * s);
}

struct SecondMoment {
  std::vector<double> mean;
  Eigen::MatrixXd sigma;  // E[X X^T], including tau I
  double frobenius = 0.0;
  double l2_norm = 0.0;   // ||X||_{L2} = sqrt(tr sigma)
};

inline SecondMoment covariance(const TargetDistribution& target) {
  const std::size_t d = target.dim;
  SecondMoment out;
  out.mean.assign(d, 0.0);
  out.sigma = Eigen::MatrixXd::Identity(d, d) * target.smoothing;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto p = target.point(i);
    for (std::size_t a = 0; a < d; ++a) {
      out.mean[a] += target.weights[i] * p[a];
      for (std::size_t b = 0; b < d; ++b) out.sigma(a, b) += target.weights[i] * p[a] * p[b];
    }
  }
  out.frobenius = out.sigma.norm();
  out.l2_norm = std::sqrt(out.sigma.trace());
  return out;
}

inline bool has_zero_mean(const TargetDistribution& target, double tol = 1e-12) {
  const auto m = covariance(target).mean;
  return std::all_of(m.begin(), m.end(), [&](double v) { return std::abs(v) <= tol; });
}

/// Parses {"points": [[...], ...], "weights": [...], "tau": 0.0}; weights default to uniform.
inline TargetDistribution target_from_json(const nlohmann::json& doc) {
  require(doc.is_object(), ErrorKind::invalid_input, "target must be a JSON object");
  require(doc.contains("points") && doc["points"].is_array(), ErrorKind::invalid_input,
          "target.points must be an array");
  std::vector<std::vector<double>> points;
  for (const auto& p : doc["points"]) {
    if (p.is_number()) {
      points.push_back({p.get<double>()});
    } else {
      require(p.is_array(), ErrorKind::invalid_input, "each point must be an array of numbers");
      points.push_back(p.get<std::vector<double>>());
    }
  }
  require(!points.empty(), ErrorKind::invalid_input, "empty point list");
  std::vector<double> weights(points.size(), 1.0);
  if (doc.contains("weights")) weights = doc["weights"].get<std::vector<double>>();
  const double tau = doc.value("tau", 0.0);
  return make_dirac_mixture(points, std::move(weights), tau);
}

inline nlohmann::json target_to_json(const TargetDistribution& target) {
  nlohmann::json points = nlohmann::json::array();
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto p = target.point(i);
    points.push_back(std::vector<double>(p.begin(), p.end()));
  }
  return {{"points", points}, {"weights", target.weights}, {"tau", target.smoothing}};
}

inline TargetDistribution load_target(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::invalid_input, "cannot open target file " + path);
  return target_from_json(nlohmann::json::parse(in));
}

}  // namespace wassdiff
