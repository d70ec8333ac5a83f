#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <thread>
#include <vector>

namespace wassdiff {

/// Neumaier compensated summation.
class CompensatedSum {
 public:
  void add(double value) {
    const double t = sum_ + value;
    if (std::abs(sum_) >= std::abs(value)) {
      comp_ += (sum_ - t) + value;
    } else {
      comp_ += (value - t) + sum_;
    }
    sum_ = t;
  }
  CompensatedSum& operator+=(double value) {
    add(value);
    return *this;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Runs body(i) for i in [0, count) on up to `threads` workers with static chunking.
/// The first exception (by lowest index) is rethrown after all workers join.
template <class Body>
void parallel_for(std::size_t count, int threads, Body&& body) {
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), count));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::size_t> error_index(workers, std::numeric_limits<std::size_t>::max());
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = count * w / workers;
    const std::size_t end = count * (w + 1) / workers;
    pool.emplace_back([&, w, begin, end] {
      for (std::size_t i = begin; i < end; ++i) {
        try {
          body(i);
        } catch (...) {
          errors[w] = std::current_exception();
          error_index[w] = i;
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  std::size_t best = workers;
  for (std::size_t w = 0; w < workers; ++w) {
    if (errors[w] && (best == workers || error_index[w] < error_index[best])) best = w;
  }
  if (best != workers) std::rethrow_exception(errors[best]);
}

/// Computes a fixed-width row of results for every replicate, in blocks, and feeds the
/// rows to `reduce` in replicate order. Output is independent of the worker count.
template <class Compute, class Reduce>
void ordered_blocks(std::size_t count, std::size_t row_width, int threads, Compute&& compute,
                    Reduce&& reduce, std::size_t block = 512) {
  std::vector<double> rows(block * row_width);
  for (std::size_t start = 0; start < count; start += block) {
    const std::size_t len = std::min(block, count - start);
    parallel_for(len, threads, [&](std::size_t k) {
      compute(start + k, std::span<double>(rows.data() + k * row_width, row_width));
    });
    for (std::size_t k = 0; k < len; ++k) {
      reduce(start + k, std::span<const double>(rows.data() + k * row_width, row_width));
    }
  }
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

/// Wilson score interval for a binomial proportion at ~95% (z = 1.96).
inline Interval wilson_interval(std::size_t successes, std::size_t trials, double z = 1.96) {
  if (trials == 0) return {0.0, 1.0};
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / (1.0 + z2 / n);
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

/// Running mean/variance of squared errors; converts to an L2 estimate with a normal CI.
class MeanSquareAccumulator {
 public:
  void add(double squared) {
    sum_ += squared;
    sum_sq_ += squared * squared;
    ++count_;
  }
  std::size_t count() const { return count_; }
  double mean_square() const { return count_ ? sum_.value() / static_cast<double>(count_) : 0.0; }
  double l2() const { return std::sqrt(mean_square()); }

  /// 95% CI on the L2 norm, from a normal approximation on the mean of squares.
  Interval l2_interval(double z = 1.96) const {
    if (count_ < 2) return {l2(), l2()};
    const double n = static_cast<double>(count_);
    const double m = mean_square();
    const double var = std::max(0.0, (sum_sq_.value() / n - m * m) * n / (n - 1.0));
    const double half = z * std::sqrt(var / n);
    return {std::sqrt(std::max(0.0, m - half)), std::sqrt(m + half)};
  }

 private:
  CompensatedSum sum_;
  CompensatedSum sum_sq_;
  std::size_t count_ = 0;
};

inline double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

inline double norm(std::span<const double> v) { return std::sqrt(squared_norm(v)); }

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace wassdiff
