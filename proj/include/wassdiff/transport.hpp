#pragma once

// Wasserstein-2 estimation: exact empirical W2 (sorting in 1-D, dense assignment in any
// dimension), the Gaussian closed form, deterministic quantile integration for 1-D laws,
// and the initialization-error diagnostics built on them.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "numeric.hpp"
#include "target.hpp"

namespace wassdiff {

enum class W2Method { quantile_1d, exact_assignment, gaussian_closed_form, quantile_grid };

inline const char* to_string(W2Method m) {
  switch (m) {
    case W2Method::quantile_1d: return "quantile-1d";
    case W2Method::exact_assignment: return "exact-assignment";
    case W2Method::gaussian_closed_form: return "gaussian-closed-form";
    case W2Method::quantile_grid: return "quantile-grid";
  }
  return "unknown";
}

struct W2Estimate {
  double value = 0.0;
  W2Method method = W2Method::quantile_1d;
  std::size_t n = 0;
  double noise_floor = std::numeric_limits<double>::quiet_NaN();

  /// Conservative lower edge used when comparing against population-level bounds.
  double lower() const { return std::isnan(noise_floor) ? value : std::max(0.0, value - noise_floor); }
};

/// Largest batch accepted by w2_exact.
inline constexpr std::size_t kMaxAssignmentSize = 4096;

namespace detail {

inline void check_pair(const SampleBatch& a, const SampleBatch& b) {
  require(a.dim == b.dim, ErrorKind::invalid_input, "W2 batches differ in dimension");
  require(a.size() == b.size(), ErrorKind::invalid_input, "W2 batches differ in size");
  require(a.size() >= 1, ErrorKind::invalid_input, "W2 needs non-empty batches");
}

}  // namespace detail

/// Exact empirical W2 in one dimension: the monotone coupling of the order statistics.
inline W2Estimate w2_1d(const SampleBatch& a, const SampleBatch& b) {
  detail::check_pair(a, b);
  require(a.dim == 1, ErrorKind::invalid_input, "w2_1d needs one-dimensional batches");
  std::vector<double> x = a.data, y = b.data;
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  CompensatedSum sum;
  for (std::size_t i = 0; i < x.size(); ++i) sum += (x[i] - y[i]) * (x[i] - y[i]);
  return {std::sqrt(sum.value() / static_cast<double>(x.size())), W2Method::quantile_1d, x.size()};
}

namespace detail {

// Dense linear assignment after Jonker & Volgenant (1987): column reduction with reduction
// transfer, then shortest augmenting paths. Their augmenting row reduction phase is left
// out on purpose: on squared-Euclidean costs it cycles through near-ties and was 10x slower.
// Costs come from `cost(i, j)`, so the n x n matrix is never stored. Returns the column
// assigned to each row.
template <class Cost>
std::vector<std::ptrdiff_t> lapjv(std::size_t size, Cost&& cost) {
  using idx = std::ptrdiff_t;
  const idx n = static_cast<idx>(size);
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<idx> x(size, -1), y(size, -1), free_rows;
  std::vector<double> v(size, inf);
  free_rows.reserve(size);

  // Column reduction with reduction transfer.
  for (idx i = 0; i < n; ++i) {
    for (idx j = 0; j < n; ++j) {
      const double c = cost(i, j);
      if (c < v[j]) {
        v[j] = c;
        y[j] = i;
      }
    }
  }
  std::vector<char> unique(size, 1);
  for (idx j = n - 1; j >= 0; --j) {
    const idx i = y[j];
    if (x[i] < 0) {
      x[i] = j;
    } else {
      unique[i] = 0;
      y[j] = -1;
    }
  }
  for (idx i = 0; i < n; ++i) {
    if (x[i] < 0) {
      free_rows.push_back(i);
    } else if (unique[i]) {
      const idx j = x[i];
      double best = inf;
      for (idx j2 = 0; j2 < n; ++j2) {
        if (j2 != j) best = std::min(best, cost(i, j2) - v[j2]);
      }
      if (best < inf) v[j] -= best;
    }
  }

  // Shortest augmenting paths (Dijkstra on reduced costs) for the rows still free.
  std::vector<idx> cols(size), pred(size);
  std::vector<double> d(size);
  for (const idx start : free_rows) {
    for (idx j = 0; j < n; ++j) {
      cols[j] = j;
      pred[j] = start;
      d[j] = cost(start, j) - v[j];
    }
    idx lo = 0, hi = 0, ready = 0, final_j = -1;
    double layer_min = 0.0;
    while (final_j < 0) {
      if (lo == hi) {
        ready = lo;
        hi = lo + 1;
        double mind = d[cols[lo]];
        for (idx k = hi; k < n; ++k) {
          const idx j = cols[k];
          if (d[j] <= mind) {
            if (d[j] < mind) {
              hi = lo;
              mind = d[j];
            }
            cols[k] = cols[hi];
            cols[hi++] = j;
          }
        }
        layer_min = mind;
        for (idx k = lo; k < hi; ++k) {
          if (y[cols[k]] < 0) {
            final_j = cols[k];
            break;
          }
        }
      }
      if (final_j >= 0) break;
      // Scan the columns at minimal distance.
      while (lo != hi && final_j < 0) {
        const idx j0 = cols[lo++];
        const idx i = y[j0];
        const double mind = d[j0];
        const double h = cost(i, j0) - v[j0] - mind;
        for (idx k = hi; k < n; ++k) {
          const idx j = cols[k];
          const double reduced = cost(i, j) - v[j] - h;
          if (reduced < d[j]) {
            d[j] = reduced;
            pred[j] = i;
            if (reduced == mind) {
              if (y[j] < 0) {
                final_j = j;
                break;
              }
              cols[k] = cols[hi];
              cols[hi++] = j;
            }
          }
        }
      }
    }
    for (idx k = 0; k < ready; ++k) {
      const idx j = cols[k];
      v[j] += d[j] - layer_min;
    }
    idx j = final_j, i = -1;
    while (i != start) {
      i = pred[j];
      y[j] = i;
      std::swap(j, x[i]);
    }
  }
  return x;
}

}  // namespace detail

/// Exact empirical W2 in any dimension: minimum-cost perfect matching with squared
/// Euclidean costs. Limited to n <= 4096; subsample larger batches.
inline W2Estimate w2_exact(const SampleBatch& a, const SampleBatch& b) {
  detail::check_pair(a, b);
  const std::size_t n = a.size();
  if (n > kMaxAssignmentSize) {
    throw Error(ErrorKind::size_limit, "exact assignment is limited to n <= " +
                                           std::to_string(kMaxAssignmentSize) + " (got " +
                                           std::to_string(n) + "); subsample the batches");
  }
  const std::size_t d = a.dim;
  const double* pa = a.data.data();
  const double* pb = b.data.data();
  auto cost = [=](std::ptrdiff_t i, std::ptrdiff_t j) {
    const double* u = pa + static_cast<std::size_t>(i) * d;
    const double* w = pb + static_cast<std::size_t>(j) * d;
    double c = 0.0;
    for (std::size_t k = 0; k < d; ++k) c += (u[k] - w[k]) * (u[k] - w[k]);
    return c;
  };
  const auto match = detail::lapjv(n, cost);
  CompensatedSum sum;
  for (std::size_t i = 0; i < n; ++i) sum += cost(static_cast<std::ptrdiff_t>(i), match[i]);
  return {std::sqrt(sum.value() / static_cast<double>(n)), W2Method::exact_assignment, n};
}

/// Picks the exact estimator for the dimension: sorting in 1-D, assignment otherwise.
inline W2Estimate w2_empirical(const SampleBatch& a, const SampleBatch& b) {
  return a.dim == 1 ? w2_1d(a, b) : w2_exact(a, b);
}

/// Symmetric PSD square root via eigendecomposition, clipping negative eigenvalues at 0.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

/// Bures-Wasserstein distance between N(mean1, cov1) and N(mean2, cov2).
inline W2Estimate w2_gaussian(const Eigen::VectorXd& mean1, const Eigen::MatrixXd& cov1,
                              const Eigen::VectorXd& mean2, const Eigen::MatrixXd& cov2) {
  const auto d = mean1.size();
  require(mean2.size() == d && cov1.rows() == d && cov1.cols() == d && cov2.rows() == d &&
              cov2.cols() == d,
          ErrorKind::invalid_input, "Gaussian parameters differ in dimension");
  auto symmetric = [](const Eigen::MatrixXd& m) {
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale;
  };
  require(symmetric(cov1) && symmetric(cov2), ErrorKind::invalid_input,
          "covariance matrices must be symmetric");
  const Eigen::MatrixXd r1 = psd_sqrt(cov1);
  const Eigen::MatrixXd cross = psd_sqrt(r1 * cov2 * r1);
  const double trace = cov1.trace() + cov2.trace() - 2.0 * cross.trace();
  const double w2sq = (mean1 - mean2).squaredNorm() + std::max(0.0, trace);
  return {std::sqrt(w2sq), W2Method::gaussian_closed_form, 0, 0.0};
}

// ---------------------------------------------------------------------------
// One-dimensional laws and deterministic quantile integration

/// A 1-D law given by its two tails. Both must be accurate where they are small, so the
/// quantile inversion stays precise far into either tail.
struct Law1D {
  std::function<double(double)> cdf;       // P(X <= x)
  std::function<double(double)> survival;  // P(X > x)
  double lower = 0.0;                      // a point with cdf ~ 0
  double upper = 0.0;                      // a point with survival ~ 0
};

/// 1-D law of (target atom) + N(0, variance); variance 0 gives the atomic law.
inline Law1D mixture_law(const TargetDistribution& target, double variance) {
  require(target.dim == 1, ErrorKind::unsupported_dimension, "mixture_law needs a 1-D target");
  require(variance >= 0.0, ErrorKind::invalid_input, "variance must be >= 0");
  std::vector<double> points(target.size()), weights = target.weights;
  for (std::size_t i = 0; i < target.size(); ++i) points[i] = target.point(i)[0];
  const double scale = std::sqrt(2.0 * variance);
  Law1D law;
  auto tail = [points, weights, scale](double x, double sign) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double z = sign * (x - points[i]);
      if (scale > 0.0) {
        total += weights[i] * 0.5 * std::erfc(-z / scale);
      } else if (z >= 0.0) {
        total += weights[i];
      }
    }
    return total;
  };
  law.cdf = [tail](double x) { return tail(x, 1.0); };
  // Survival at x is P(X > x); for atoms that is weight of points strictly above x.
  law.survival = [points, weights, scale, tail](double x) {
    if (scale > 0.0) return tail(x, -1.0);
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (points[i] > x) total += weights[i];
    }
    return total;
  };
  const auto [lo, hi] = std::minmax_element(points.begin(), points.end());
  const double reach = 40.0 * std::sqrt(variance) + 1.0;
  law.lower = *lo - reach;
  law.upper = *hi + reach;
  return law;
}

inline Law1D gaussian_law(double mean, double variance) {
  return mixture_law(make_dirac_mixture(1, {mean}, {1.0}), variance);
}

/// Generalized inverse: the smallest x with P(X <= x) >= u, found by bisection. For u above
/// one half the survival function is used, with 1 - u passed exactly by the caller.
inline double quantile(const Law1D& law, double u, double one_minus_u, double tolerance = 1e-12) {
  double lo = law.lower, hi = law.upper;
  const bool upper_tail = u > 0.5;
  auto below = [&](double x) {
    return upper_tail ? law.survival(x) > one_minus_u : law.cdf(x) < u;
  };
  while (below(hi)) hi += (hi - lo);
  while (!below(lo)) lo -= (hi - lo);
  while (hi - lo > tolerance * std::max(1.0, std::abs(lo) + std::abs(hi)) * 0.5) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (below(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return hi;
}

/// W2 between two 1-D laws by the midpoint rule on the quantile coupling,
/// W2^2 = int_0^1 (F^-1(u) - G^-1(u))^2 du, with `nodes` points.
inline W2Estimate w2_quantile_grid(const Law1D& a, const Law1D& b, std::size_t nodes = 100000,
                                   double tolerance = 1e-12) {
  require(nodes >= 2, ErrorKind::invalid_input, "need at least 2 quantile nodes");
  const double k = static_cast<double>(nodes);
  CompensatedSum sum;
  for (std::size_t i = 0; i < nodes; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / k;
    const double v = (static_cast<double>(nodes - i) - 0.5) / k;
    const double diff = quantile(a, u, v, tolerance) - quantile(b, u, v, tolerance);
    sum += diff * diff;
  }
  return {std::sqrt(sum.value() / k), W2Method::quantile_grid, nodes, 0.0};
}

// ---------------------------------------------------------------------------
// Noise floors

/// Self-distance of the empirical estimator: W2 between two independent size-n batches of
/// X_t (t >= 0, effective t + tau). Used as the sampling-bias scale for comparisons.
inline double noise_floor(const TargetDistribution& target, double t, std::size_t n,
                          std::uint64_t seed) {
  const auto a = forward_marginal_sample(target, t, n, seed);
  const auto b = forward_marginal_sample(target, t, n, seed ^ 0x5eed5eed5eedULL);
  return w2_empirical(a, b).value;
}

inline double gaussian_noise_floor(std::size_t dim, double variance, std::size_t n,
                                   std::uint64_t seed) {
  const auto a = sample_gaussian(dim, variance, n, seed);
  const auto b = sample_gaussian(dim, variance, n, seed ^ 0x5eed5eed5eedULL);
  return w2_empirical(a, b).value;
}

/// Attaches a noise floor to an estimate comparing samples against draws of X_t.
inline W2Estimate with_noise_floor(W2Estimate est, const TargetDistribution& target, double t,
                                   std::uint64_t seed) {
  est.noise_floor = noise_floor(target, t, est.n, seed);
  return est;
}

// ---------------------------------------------------------------------------
// Initialization error

struct Prop4Result {
  double c = 0.0;               // (gamma^2 - beta^2) / alpha^2
  double coupling_bound = 0.0;  // alpha W2(L(X), N(0, c I))
  double asymptote = 0.0;       // (alpha^2 / (2 beta)) ||Sigma - c I||_F
  W2Method method = W2Method::quantile_grid;
};

/// Distance from L(alpha X + beta Z) to N(0, gamma^2 I): the coupling bound and the
/// large-beta/alpha asymptote. In d >= 2 the W2 in the bound is sampled with n draws.
inline Prop4Result prop4_general(double alpha, double beta, double gamma,
                                 const TargetDistribution& target, std::size_t n = 4096,
                                 std::uint64_t seed = 1, std::size_t nodes = 100000) {
  require(alpha > 0.0 && beta > 0.0, ErrorKind::invalid_input, "need alpha > 0 and beta > 0");
  require(gamma >= beta, ErrorKind::invalid_input, "need gamma >= beta");
  Prop4Result r;
  r.c = (gamma * gamma - beta * beta) / (alpha * alpha);
  const auto moment = covariance(target);
  const Eigen::MatrixXd diff =
      moment.sigma - r.c * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(target.dim),
                                                     static_cast<Eigen::Index>(target.dim));
  r.asymptote = alpha * alpha / (2.0 * beta) * diff.norm();
  if (target.dim == 1) {
    r.coupling_bound =
        alpha * w2_quantile_grid(mixture_law(target, target.smoothing), gaussian_law(0.0, r.c), nodes).value;
    r.method = W2Method::quantile_grid;
  } else {
    const auto xs = sample_target(target, n, seed);
    const auto gs = sample_gaussian(target.dim, r.c, n, seed + 1);
    r.coupling_bound = alpha * w2_exact(xs, gs).value;
    r.method = W2Method::exact_assignment;
  }
  return r;
}

struct InitErrorCheck {
  double horizon = 0.0;
  bool zero_mean = true;
  W2Estimate empirical;                                   // sampled, with noise floor
  double exact = std::numeric_limits<double>::quiet_NaN();  // quantile grid, d = 1 only
  double asymptote = std::numeric_limits<double>::quiet_NaN();  // ||Sigma||_F / (2 sqrt T)
  double crude = 0.0;                                     // ||X||_{L2}
  double ratio = std::numeric_limits<double>::quiet_NaN();  // (exact or empirical) / asymptote
};

/// W2(L(X_T), N(0, (T + tau) I)) against its large-T asymptote and the crude bound ||X||.
/// The smoothing part of X is carried by the Gaussian, so Sigma is the atom second moment.
inline InitErrorCheck init_error_check(const TargetDistribution& target, double horizon,
                                       std::size_t n, std::uint64_t seed,
                                       std::size_t nodes = 100000) {
  require(horizon > 0.0, ErrorKind::invalid_input, "T must be > 0");
  require(n >= 2, ErrorKind::invalid_input, "need at least 2 draws");
  InitErrorCheck out;
  out.horizon = horizon;
  out.zero_mean = has_zero_mean(target);
  const double variance = horizon + target.smoothing;
  const auto xt = forward_marginal_sample(target, horizon, n, seed);
  const auto g = sample_gaussian(target.dim, variance, n, seed + 1);
  out.empirical = w2_empirical(xt, g);
  out.empirical.noise_floor = gaussian_noise_floor(target.dim, variance, n, seed + 2);
  TargetDistribution atoms = target;
  atoms.smoothing = 0.0;
  out.crude = covariance(atoms).l2_norm;
  if (out.zero_mean) out.asymptote = covariance(atoms).frobenius / (2.0 * std::sqrt(horizon));
  if (target.dim == 1) {
    out.exact = w2_quantile_grid(mixture_law(target, variance), gaussian_law(0.0, variance), nodes).value;
  }
  if (out.zero_mean && out.asymptote > 0.0) {
    const double measured = std::isnan(out.exact) ? out.empirical.lower() : out.exact;
    out.ratio = measured / out.asymptote;
  }
  return out;
}

/// Smallest T on `horizons` (ascending) from which the measured init error stays at or
/// below its asymptote. Returns +inf if that never happens on the grid.
inline double calibrate_init_threshold(const TargetDistribution& target,
                                       const std::vector<double>& horizons, std::size_t n,
                                       std::uint64_t seed, std::size_t nodes = 20000) {
  require(!horizons.empty() && std::is_sorted(horizons.begin(), horizons.end()),
          ErrorKind::invalid_input, "horizons must be non-empty and ascending");
  double threshold = std::numeric_limits<double>::infinity();
  for (std::size_t i = horizons.size(); i-- > 0;) {
    const auto check = init_error_check(target, horizons[i], n, seed, nodes);
    if (!check.zero_mean) return std::numeric_limits<double>::infinity();
    // A degenerate target (Sigma = 0) has zero init error at every T.
    const bool ok = std::isnan(check.ratio) ? check.asymptote == 0.0 : check.ratio <= 1.0;
    if (!ok) break;
    threshold = horizons[i];
  }
  return threshold;
}

}  // namespace wassdiff
