#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "test_support.hpp"
#include "wassdiff/bounds.hpp"
#include "wassdiff/rng.hpp"

using namespace wassdiff;

namespace {

BoundInputs base_inputs() {
  BoundInputs in;
  in.d = 1;
  in.radius = 1.0;
  in.horizon = 10.0;
  in.epsilon = 0.5;
  in.steps = 400;
  return in;
}

}  // namespace

TEST(DiscretizationBounds, Examples) {
  EXPECT_NEAR(discretization_bounds(1, 1.0, 1.0, 0.1).heun, 0.022, 1e-15);
  const auto b = discretization_bounds(1, 1.0, 0.5, 0.05);
  EXPECT_NEAR(b.ode, 0.02, 1e-15);
  EXPECT_NEAR(b.sde, (2.0 / 3.0) * 4.0 * std::pow(0.05, 1.5), 1e-15);
  EXPECT_NEAR(b.sde, 0.0298, 1e-4);
  const auto z = discretization_bounds(3, 2.0, 0.5, 0.0);
  EXPECT_EQ(z.ode, 0.0);
  EXPECT_EQ(z.heun, 0.0);
  EXPECT_EQ(z.sde, 0.0);
  EXPECT_FALSE(discretization_bounds(1, 0.5, 1.0, 0.1).precondition_ok);
}

TEST(EarlyStopping, Examples) {
  EXPECT_EQ(early_stopping_bound(1, 0.0), 0.0);
  EXPECT_NEAR(early_stopping_bound(2, 0.01), 0.141421356, 1e-9);
  EXPECT_EQ(early_stopping_bound(1, 1.0), 1.0);
}

TEST(EarlyStopping, MonteCarloOracle) {
  rng::Stream s(5, "bm", 0);
  double acc = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    const double a = 0.1 * s.normal(), b = 0.1 * s.normal();
    acc += a * a + b * b;
  }
  EXPECT_NEAR(std::sqrt(acc / n), early_stopping_bound(2, 0.01), 0.01 * early_stopping_bound(2, 0.01));
}

TEST(Propagation, EmptyProduct) {
  const TimeGrid grid(10.0, 0.5, 1);
  for (auto flavor : {PropagationFlavor::ode_half_step, PropagationFlavor::sde_full_step,
                      PropagationFlavor::heun}) {
    const auto p = propagation_product(grid, 1.0, flavor, 4.0);
    EXPECT_EQ(p.products[1], 1.0);
    EXPECT_GE(p.product_bounds[1], 1.0);
  }
}

TEST(Propagation, OdeExample) {
  const auto p = propagation_product(TimeGrid(10.0, 0.5, 100), 1.0, PropagationFlavor::ode_half_step);
  // Independent high-precision product of the 100 factors.
  EXPECT_NEAR(p.products[0], 0.54991579957325994, 1e-13);
  EXPECT_NEAR(p.product_bounds[0], 0.85959619001776935, 1e-13);
  EXPECT_LE(p.products[0], p.product_bounds[0]);
}

TEST(Propagation, ContractionRegime) {
  // eps = 2 > R^2 = 1, so every factor is below one.
  const TimeGrid grid(10.0, 2.0, 50);
  const auto p = propagation_product(grid, 1.0, PropagationFlavor::sde_full_step);
  for (std::size_t n = 0; n < 50; ++n) EXPECT_LT(p.products[n], p.products[n + 1]);
}

TEST(Propagation, DominanceOverRandomDraws) {
  rng::Stream s(200, "dom", 0);
  for (int trial = 0; trial < 200; ++trial) {
    const double r = 0.2 + 2.0 * s.uniform();
    const double eps = r * r * (0.1 + 0.9 * s.uniform());
    const double horizon = eps * (2.0 + 200.0 * s.uniform());
    const double lip = 2.0 * s.uniform() * r * r / (eps * eps);
    // h <= eps / 2, and the Heun guard h T L^2 / 8 stays below 30 so nothing overflows.
    const double min_steps = std::max(2.0 * (horizon - eps) / eps,
                                      (horizon - eps) * horizon * lip * lip / 240.0);
    const std::size_t steps = static_cast<std::size_t>(std::ceil(min_steps)) +
                              static_cast<std::size_t>(s.uniform() * 500);
    const TimeGrid grid(horizon, eps, steps);
    for (auto flavor : {PropagationFlavor::ode_half_step, PropagationFlavor::sde_full_step,
                        PropagationFlavor::heun}) {
      const auto p = propagation_product(grid, r, flavor, lip);
      ASSERT_TRUE(p.precondition_ok);
      for (std::size_t n = 0; n <= steps; ++n) {
        ASSERT_LE(p.products[n], p.product_bounds[n] * (1 + 1e-12)) << trial << " n=" << n;
      }
      ASSERT_LE(p.sum, p.sum_bound * (1 + 1e-12));
      ASSERT_TRUE(std::isfinite(p.sum));
      if (flavor == PropagationFlavor::sde_full_step) {
        ASSERT_LE(p.sum_squares, p.sum_squares_bound * (1 + 1e-12));
      }
    }
  }
}

TEST(Prop5, GoldenValue) {
  const auto r = bound_euler_ode(base_inputs());
  EXPECT_EQ(r.equation, "prop5");
  EXPECT_TRUE(r.precondition_ok);
  EXPECT_NEAR(r.h, 0.02375, 1e-15);
  EXPECT_NEAR(r.early_stopping, 0.70710678118654752, 1e-14);
  EXPECT_NEAR(r.init_propagated, 0.27182818284590452, 1e-14);
  EXPECT_NEAR(r.discretization_propagated, 1.6332327610337618, 1e-12);
  EXPECT_EQ(r.score_propagated, 0.0);
  EXPECT_NEAR(r.total, 2.6121677250662138, 1e-12);
}

TEST(Prop5, UniformShortcutDominatesGridSum) {
  rng::Stream s(201, "p5", 0);
  for (int trial = 0; trial < 20; ++trial) {
    BoundInputs in = base_inputs();
    in.epsilon = 0.1 + 0.9 * s.uniform();
    in.horizon = 2.0 + 50.0 * s.uniform();
    in.steps = static_cast<std::size_t>(std::ceil((in.horizon - in.epsilon) / in.epsilon)) + 1 +
               static_cast<std::size_t>(s.uniform() * 1000);
    in.eps_bar = 0.01 + s.uniform();
    const auto r = bound_euler_ode(in);
    EXPECT_GT(r.score_propagated, 0.0);
    EXPECT_LE(r.score_propagated, r.score_uniform_shortcut);
  }
}

TEST(Prop6, GoldenValue) {
  BoundInputs in = base_inputs();
  in.lipschitz = 4.0;
  const auto r = bound_heun(in);
  EXPECT_EQ(r.equation, "prop6");
  EXPECT_NEAR(r.init_propagated, 1.1881707113099399, 1e-12);
  EXPECT_NEAR(r.discretization_propagated, 15.089889664228756, 1e-10);
  EXPECT_NEAR(r.total, 16.985167156725244, 1e-10);
  // The default Lipschitz constant is R^2 / eps^2 = 4.
  EXPECT_EQ(bound_heun(base_inputs()).total, r.total);
}

TEST(Prop6, HalvingRatio) {
  BoundInputs in = base_inputs();
  in.lipschitz = 4.0;
  const auto a = bound_heun(in);
  in.steps *= 2;
  const auto b = bound_heun(in);
  const double dh = a.h - b.h;
  const double ratio = a.discretization_propagated / b.discretization_propagated;
  EXPECT_NEAR(ratio, 4.0 * std::exp(dh * in.horizon * 16.0 / 8.0), 1e-12);
  EXPECT_GT(ratio, 4.0 * std::exp(-dh * in.horizon * 16.0 / 8.0));
  EXPECT_EQ(bound_heun(base_inputs()).score_propagated, 0.0);
}

TEST(Prop7, GoldenValue) {
  const auto r = bound_em(base_inputs());
  EXPECT_EQ(r.equation, "prop7");
  EXPECT_NEAR(r.init_propagated, 0.23366247031379309, 1e-13);
  EXPECT_NEAR(r.discretization_propagated, 11.201700753058626, 1e-11);
  EXPECT_NEAR(r.total, 12.142470004558967, 1e-11);
}

TEST(Prop7, UniformShortcutDominatesGridSum) {
  rng::Stream s(202, "p7", 0);
  for (int trial = 0; trial < 20; ++trial) {
    BoundInputs in = base_inputs();
    in.epsilon = 0.1 + 0.9 * s.uniform();
    in.horizon = 2.0 + 50.0 * s.uniform();
    in.steps = static_cast<std::size_t>(std::ceil(2.0 * (in.horizon - in.epsilon) / in.epsilon)) +
               1 + static_cast<std::size_t>(s.uniform() * 1000);
    in.eps_bar = 0.01 + s.uniform();
    const auto r = bound_em(in);
    EXPECT_TRUE(r.precondition_ok);
    EXPECT_LE(r.score_propagated, r.score_uniform_shortcut);
  }
}

TEST(Prop8, GoldenValueAndLinearInH) {
  const auto a = bound_em_true_score(base_inputs());
  EXPECT_EQ(a.equation, "prop8");
  EXPECT_NEAR(a.discretization_propagated, 0.93594710586454903, 1e-13);
  EXPECT_NEAR(a.total, 1.8767163573648896, 1e-13);
  BoundInputs in = base_inputs();
  in.steps = 800;
  const auto b = bound_em_true_score(in);
  EXPECT_NEAR(b.discretization_propagated * 2.0, a.discretization_propagated, 1e-14);
  in.eps_bar = 0.3;
  EXPECT_EQ(bound_em_true_score(in).score_propagated, 0.0);
}

TEST(Bounds, PreconditionsFlagged) {
  BoundInputs in = base_inputs();
  in.steps = 5;  // h = 1.9 > eps
  const auto r = bound_euler_ode(in);
  EXPECT_FALSE(r.precondition_ok);
  EXPECT_GT(r.total, 0.0);
  in = base_inputs();
  in.steps = 15;  // h = 0.63: fine for prop5, too large for prop7
  EXPECT_FALSE(bound_em(in).precondition_ok);
  in = base_inputs();
  in.epsilon = 2.0;
  EXPECT_FALSE(bound_em(in).precondition_ok);
  in = base_inputs();
  in.init_threshold = 20.0;
  EXPECT_FALSE(bound_em(in).precondition_ok);
  in.crude_init = true;
  const auto crude = bound_em(in);
  EXPECT_TRUE(crude.precondition_ok);
  EXPECT_EQ(crude.init_propagated, crude.init_crude);
}

TEST(NoEarlyStop, RemappingMatchesEarlyStoppedFormulas) {
  auto series = [](double t) { return 0.05 + 0.02 * std::sin(t); };
  for (auto prop : {Proposition::euler_ode, Proposition::heun, Proposition::em,
                    Proposition::em_true_score}) {
    BoundInputs a = base_inputs();
    a.score_error = series;
    BoundInputs b = a;
    b.horizon = a.horizon - a.epsilon;  // T' = T - tau
    b.score_error = [&](double s) { return series(s + a.epsilon); };
    const auto ra = bound_for(prop, a);
    const auto rb = bound_no_early_stopping(prop, b);
    EXPECT_EQ(rb.equation, ra.equation + "+no-early-stop");
    EXPECT_EQ(rb.early_stopping, 0.0);
    EXPECT_NEAR(rb.h, ra.h, 1e-15);
    EXPECT_NEAR(rb.init_propagated, ra.init_propagated, 1e-12 * ra.init_propagated);
    EXPECT_NEAR(rb.discretization_propagated, ra.discretization_propagated,
                1e-12 * ra.discretization_propagated);
    EXPECT_NEAR(rb.score_propagated, ra.score_propagated, 1e-12 * (1 + ra.score_propagated));
  }
}

TEST(NoEarlyStop, InitTermDecreasesInTau) {
  // 2 tau (T + tau)^{-3/2} exp(R^2 / tau) is decreasing once tau >= 2T, and tends to 0.
  double previous = 1e300;
  for (double tau = 20.0; tau <= 1e6; tau *= 1.5) {
    BoundInputs in = base_inputs();
    in.epsilon = tau;
    const auto r = bound_no_early_stopping(Proposition::em, in);
    EXPECT_LT(r.init_propagated, previous);
    previous = r.init_propagated;
  }
  EXPECT_LT(previous, 5e-3);
}

TEST(NoEarlyStop, GoldenEmVariant) {
  const auto r = bound_no_early_stopping(Proposition::em, base_inputs());
  EXPECT_EQ(r.equation, "prop7+no-early-stop");
  EXPECT_NEAR(r.init_propagated, 0.21717259221387157, 1e-13);
  EXPECT_NEAR(r.discretization_propagated, 11.644708216332052, 1e-11);
  EXPECT_NEAR(r.total, 11.861880808545924, 1e-11);
}

TEST(BoundsProperty, TotalsNonincreasingInN) {
  for (auto prop : {Proposition::euler_ode, Proposition::em_true_score}) {
    double previous = 1e300;
    for (std::size_t n = 20; n <= 5000; n += 37) {
      BoundInputs in = base_inputs();
      in.steps = n;
      const double total = bound_for(prop, in).total;
      EXPECT_LE(total, previous);
      previous = total;
    }
  }
  for (auto prop : {Proposition::heun, Proposition::em}) {
    double previous = 1e300;
    for (std::size_t n = 20; n <= 5000; n += 37) {
      BoundInputs in = base_inputs();
      in.steps = n;
      const auto r = bound_for(prop, in);
      EXPECT_LE(r.discretization_propagated, previous);
      EXPECT_GE(r.init_propagated, 0.0);
      previous = r.discretization_propagated;
    }
  }
}

TEST(BoundsProperty, ScoreSumsConvergeToIntegrals) {
  BoundInputs in = base_inputs();
  in.steps = 1u << 14;
  in.score_error = [](double t) { return 1.0 / std::sqrt(t); };
  const double eps = in.epsilon, T = in.horizon;
  const double g = std::exp(1.0 / (2 * eps));
  // integral of t^{-1} and t^{-3/2} over [eps, T]
  const double ode_limit = std::sqrt(eps / 2.0) * g * std::log(T / eps);
  const double em_limit = 2.0 * eps * g * g * 2.0 * (1.0 / std::sqrt(eps) - 1.0 / std::sqrt(T));
  EXPECT_NEAR(bound_euler_ode(in).score_propagated / ode_limit, 1.0, 0.01);
  // Heun carries the extra guard exp(h T L^2 / 8), which tends to 1 with h; compare the sums.
  const auto heun = bound_heun(in);
  const double guard = std::exp(heun.h * T * heun.lipschitz * heun.lipschitz / 8.0);
  EXPECT_NEAR(heun.score_propagated / guard / (std::sqrt(eps / 2.0) * g * g * std::log(T / eps)),
              1.0, 0.01);
  EXPECT_NEAR(bound_em(in).score_propagated / em_limit, 1.0, 0.01);
}

TEST(BoundsProperty, EmRatesAcrossHalvings) {
  BoundInputs in = base_inputs();
  for (std::size_t n = 100; n <= 3200; n *= 2) {
    in.steps = n;
    const auto a6 = bound_em(in), a7 = bound_em_true_score(in);
    in.steps = 2 * n;
    const auto b6 = bound_em(in), b7 = bound_em_true_score(in);
    in.steps = n;
    EXPECT_GT(a6.total, 0.0);
    EXPECT_TRUE(std::isfinite(a7.total));
    EXPECT_NEAR(a6.discretization_propagated / b6.discretization_propagated, std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(a7.discretization_propagated / b7.discretization_propagated, 2.0, 1e-12);
  }
}

TEST(Bounds, JsonTags) {
  const auto j = to_json(bound_em(base_inputs()));
  EXPECT_EQ(j["equation"], "prop7");
  EXPECT_TRUE(j["terms"].contains("discretization_propagated"));
  EXPECT_EQ(j["init_variants"]["selected"], "asymptotic");
}

TEST(FitRate, ExactPowers) {
  std::vector<double> hs, e1, e2;
  for (int k = 0; k < 6; ++k) {
    hs.push_back(0.1 / std::pow(2.0, k));
    e1.push_back(3.0 * hs.back());
    e2.push_back(0.5 * hs.back() * hs.back());
  }
  const auto f1 = fit_rate(hs, e1);
  EXPECT_NEAR(f1.slope, 1.0, 1e-12);
  EXPECT_NEAR(f1.r2, 1.0, 1e-12);
  EXPECT_NEAR(f1.intercept, std::log(3.0), 1e-12);
  EXPECT_NEAR(fit_rate(hs, e2).slope, 2.0, 1e-12);
}

TEST(FitRate, NoisySquareRoot) {
  rng::Stream s(203, "fit", 0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> hs, es;
    for (int k = 0; k <= 5; ++k) {
      hs.push_back(std::pow(2.0, -k));
      es.push_back(2.0 * std::sqrt(hs.back()) * (1.0 + 0.05 * (2 * s.uniform() - 1)));
    }
    const auto f = fit_rate(hs, es);
    EXPECT_GE(f.slope, 0.4);
    EXPECT_LE(f.slope, 0.6);
  }
}

TEST(FitRate, Errors) {
  EXPECT_THROW(fit_rate({1, 2}, {1, 2}), Error);
  EXPECT_THROW(fit_rate({1, 2, 3}, {1, 0, 2}), Error);
  EXPECT_THROW(fit_rate({1, 2, 3}, {1, -1, 2}), Error);
}
