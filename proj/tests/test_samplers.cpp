#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "test_support.hpp"
#include "wassdiff/samplers.hpp"

using namespace wassdiff;
namespace wt = wassdiff::testing;

namespace {

std::shared_ptr<const TargetDistribution> shared(TargetDistribution t) {
  return std::make_shared<const TargetDistribution>(std::move(t));
}

std::vector<double> column(const SampleBatch& b, std::size_t k = 0) {
  std::vector<double> out;
  for (std::size_t i = 0; i < b.size(); ++i) out.push_back(b.row(i)[k]);
  return out;
}

double log2_slope(const CoupledRun& run) {
  std::vector<double> hs, errs;
  for (const auto& lr : run.levels) {
    hs.push_back(lr.h);
    errs.push_back(lr.end_error);
  }
  return fit_rate(hs, errs).slope;
}

}  // namespace

TEST(Samplers, AlgorithmNames) {
  for (auto a : {Algorithm::euler_maruyama, Algorithm::euler_ode, Algorithm::heun}) {
    EXPECT_EQ(parse_algorithm(to_string(a)), a);
  }
  EXPECT_THROW(parse_algorithm("rk45"), Error);
}

TEST(Samplers, OneStepEulerOdeUnrolls) {
  auto target = shared(two_dirac(1.0));
  SamplerSpec spec{Algorithm::euler_ode, ScoreField::exact(target), TimeGrid(3.0, 0.25, 1)};
  const auto out = run_sampler(spec, 50, 17);
  const double h = 3.0 - 0.25;
  for (std::size_t i = 0; i < out.size(); ++i) {
    rng::Stream s(17, rng::tag::init, i);
    const double x0 = std::sqrt(3.0) * s.normal();
    const double expected = x0 + 0.5 * h * (std::tanh(x0 / 3.0) - x0) / 3.0;
    EXPECT_NEAR(out.row(i)[0], expected, 1e-14 * (1.0 + std::abs(expected)));
  }
  EXPECT_EQ(out.time_label, 0.25);
}

TEST(Samplers, OneStepEulerMaruyamaAndHeunUnroll) {
  auto target = shared(two_dirac(1.0, 0.5));
  const double T = 2.0, eps = 0.5, h = T - eps, V = T + 0.5;
  auto s = [](double u, double x) { return (std::tanh(x / u) - x) / u; };
  {
    SamplerSpec spec{Algorithm::euler_maruyama, ScoreField::exact(target), TimeGrid(T, eps, 1)};
    const auto out = run_sampler(spec, 20, 5);
    for (std::size_t i = 0; i < out.size(); ++i) {
      rng::Stream a(5, rng::tag::init, i);
      rng::Stream b(5, rng::tag::step_noise, i, 1);
      const double x0 = std::sqrt(V) * a.normal();
      const double expected = x0 + h * s(T + 0.5, x0) + std::sqrt(h) * b.normal();
      EXPECT_NEAR(out.row(i)[0], expected, 1e-13);
    }
  }
  {
    SamplerSpec spec{Algorithm::heun, ScoreField::exact(target), TimeGrid(T, eps, 1)};
    const auto out = run_sampler(spec, 20, 5);
    for (std::size_t i = 0; i < out.size(); ++i) {
      rng::Stream a(5, rng::tag::init, i);
      const double x0 = std::sqrt(V) * a.normal();
      const double y = x0 + 0.5 * h * s(T + 0.5, x0);
      const double expected = x0 + 0.25 * h * (s(T + 0.5, x0) + s(eps + 0.5, y));
      EXPECT_NEAR(out.row(i)[0], expected, 1e-13);
    }
  }
}

TEST(Samplers, InitVarianceUsesEffectiveHorizon) {
  auto target = shared(make_dirac_mixture(1, {0.0}, {1.0}, 3.0));
  SamplerSpec spec{Algorithm::euler_ode, ScoreField::exact(target), TimeGrid(5.0, 0.0, 4)};
  EXPECT_DOUBLE_EQ(spec.init_variance(), 8.0);
}

TEST(Samplers, DiracSmoothedEulerOdeVariance) {
  // Score -x/(1 + s): the flow is linear and maps N(0, 1 + T) onto N(0, 1) exactly.
  auto target = shared(make_dirac_mixture(1, {0.0}, {1.0}, 1.0));
  SamplerSpec spec{Algorithm::euler_ode, ScoreField::exact(target), TimeGrid(10.0, 0.0, 4096)};
  const auto out = run_sampler(spec, 100000, 2024);
  EXPECT_NEAR(wt::variance(column(out)), 1.0, 0.03);
}

TEST(Samplers, EulerMaruyamaMatchesGaussianNodeMoments) {
  // Target N(m, 1) (a Dirac at m smoothed by tau = 1). The reverse SDE is linear; from
  // X_0 ~ N(0, T + 1) its law at forward time u is N(m (1 - u / (T + 1)), u).
  const double m = 2.0, T = 10.0;
  auto target = shared(make_dirac_mixture(1, {m}, {1.0}, 1.0));
  SamplerSpec spec{Algorithm::euler_maruyama, ScoreField::exact(target), TimeGrid(T, 0.0, 4096)};
  const auto moments = sampler_path_moments(spec, 100000, 99);
  double worst_mean = 0.0, worst_var = 0.0;
  for (std::size_t n = 0; n <= spec.grid.steps(); ++n) {
    const double u = spec.grid.forward_time(n) + 1.0;
    const double mu = m * (1.0 - u / (T + 1.0));
    const double var = u;
    const double got_var = moments.second[n] - moments.mean[n] * moments.mean[n];
    worst_mean = std::max(worst_mean, std::abs(moments.mean[n] - mu) / std::max(std::abs(mu), std::sqrt(var)));
    worst_var = std::max(worst_var, std::abs(got_var - var) / var);
  }
  EXPECT_LT(worst_mean, 0.01);
  EXPECT_LT(worst_var, 0.01);
}

TEST(Samplers, NegatedFieldReversesOneEulerStep) {
  auto target = shared(make_dirac_mixture({{1.0, -0.5}, {-0.3, 0.8}}, {1.0, 2.0}, 0.0));
  const ScoreField field = ScoreField::exact(target);
  const ScoreField neg = field.negated();
  rng::Stream s(3, "negation", 0);
  StepWorkspace ws(2);
  const std::vector<double> noise(2, 0.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::vector<double> x{4.0 * s.normal(), 4.0 * s.normal()};
    const double t = 0.1 + 3.0 * s.uniform(), h = 0.05 * s.uniform() + 1e-3;
    std::vector<double> fwd = x, back = x;
    sampler_step(Algorithm::euler_ode, field, t, t - h, h, fwd, noise, ws);
    sampler_step(Algorithm::euler_ode, neg, t, t - h, h, back, noise, ws);
    const auto sp = field(t, x), sn = neg(t, x);
    for (std::size_t k = 0; k < 2; ++k) {
      // The negated field is the bitwise negation at the same point.
      EXPECT_EQ(sn[k], -sp[k]) << trial;
      // Applying the negated increment to the stepped state returns x up to rounding.
      const double increment = back[k] - x[k];
      const double ulp = std::numeric_limits<double>::epsilon() * std::max(std::abs(x[k]), std::abs(fwd[k]));
      EXPECT_LE(std::abs((fwd[k] + increment) - x[k]), 2.0 * ulp) << trial;
    }
  }
}

TEST(Samplers, DeterministicAcrossThreadCounts) {
  auto target = shared(make_dirac_mixture({{1.0, 0.0}, {0.0, -1.0}, {0.5, 0.5}}, {1, 1, 2}, 0.0));
  for (auto alg : {Algorithm::euler_maruyama, Algorithm::euler_ode, Algorithm::heun}) {
    SamplerSpec spec{alg, ScoreField::exact(target), TimeGrid(4.0, 0.1, 64)};
    const auto one = run_sampler(spec, 300, 8, 1);
    const auto four = run_sampler(spec, 300, 8, 4);
    EXPECT_EQ(one.data, four.data) << to_string(alg);
    EXPECT_EQ(run_sampler(spec, 300, 8, 1).data, one.data);
  }
  CoupledOptions opt;
  opt.base_steps = 8;
  opt.levels = 3;
  opt.replicates = 700;
  opt.defect_replicates = 0;
  const auto a = coupled_strong_error_sde(two_dirac(1.0), 2.0, 0.2, opt, 4);
  opt.threads = 3;
  const auto b = coupled_strong_error_sde(two_dirac(1.0), 2.0, 0.2, opt, 4);
  for (std::size_t l = 0; l < a.levels.size(); ++l) {
    EXPECT_EQ(a.levels[l].node_error, b.levels[l].node_error);
  }
}

TEST(Samplers, DivergenceCarriesStepIndex) {
  auto target = shared(two_dirac(1.0));
  // A strongly super-linear drift blows up in a few steps from a wide start.
  SamplerSpec spec{Algorithm::euler_ode, ScoreField::quadratic(target, 50.0), TimeGrid(10.0, 0.1, 20)};
  try {
    run_sampler(spec, 10, 1);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GE(e.step(), 1u);
    EXPECT_LE(e.step(), 20u);
    EXPECT_EQ(e.kind(), ErrorKind::divergence);
  }
}

TEST(Samplers, RunSamplerRejectsEmptyBatch) {
  auto target = shared(two_dirac(1.0));
  SamplerSpec spec{Algorithm::heun, ScoreField::exact(target), TimeGrid(1.0, 0.1, 4)};
  EXPECT_THROW(run_sampler(spec, 0, 1), Error);
}

TEST(ReferenceFlow, SmoothedDiracClosedForm) {
  const auto target = make_dirac_mixture(1, {0.0}, {1.0}, 1.0);
  const double T = 10.0;
  for (double eps : {0.0, 0.3, 2.0}) {
    const TimeGrid grid(T, eps, 10);
    SampleBatch start = sample_gaussian(1, T + 1.0, 50, 11);
    const auto out = reference_reverse_ode(target, grid, start, {1e-12});
    for (std::size_t i = 0; i < start.size(); ++i) {
      const double expected = start.row(i)[0] * std::sqrt((1.0 + eps) / (1.0 + T));
      EXPECT_NEAR(out.row(i)[0], expected, 1e-10);
    }
  }
}

TEST(ReferenceFlow, NestedTolerance) {
  const auto target = two_dirac(1.0);
  const TimeGrid grid(5.0, 0.1, 10);
  const SampleBatch start = sample_gaussian(1, 5.0, 200, 12);
  ReferenceOptions loose{1e-6}, tight{1e-10};
  const auto a = reference_reverse_ode(target, grid, start, loose);
  const auto b = reference_reverse_ode(target, grid, start, tight);
  double sup = 0.0;
  for (std::size_t j = 0; j < a.data.size(); ++j) sup = std::max(sup, std::abs(a.data[j] - b.data[j]));
  EXPECT_LT(sup, 1e-6);
}

TEST(ReferenceFlow, ToleranceNotMet) {
  const auto target = two_dirac(1.0);
  const std::vector<double> times{5.0, 0.01}, x0{0.3};
  std::vector<double> out(2);
  ReferenceOptions opt{1e-15, 2, 1};
  try {
    reference_flow(target, times, x0, out, opt);
    FAIL() << "expected tolerance_not_met";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::tolerance_not_met);
  }
  EXPECT_THROW(reference_flow(target, times, x0, out, ReferenceOptions{0.0}), Error);
}

TEST(ReferenceFlow, IntermediateNodesMatchDirectIntegration) {
  const auto target = make_dirac_mixture({{1.0, 0.0}, {-0.5, 0.5}}, {1.0, 3.0}, 0.2);
  const std::vector<double> times{4.0, 2.0, 1.0, 0.05};
  const std::vector<double> x0{0.7, -1.2};
  std::vector<double> path(8);
  reference_flow(target, times, x0, path, {1e-12});
  const std::vector<double> direct_times{4.0, 1.0};
  std::vector<double> direct(4);
  reference_flow(target, direct_times, x0, direct, {1e-12});
  EXPECT_NEAR(path[4], direct[2], 1e-10);
  EXPECT_NEAR(path[5], direct[3], 1e-10);
  EXPECT_EQ(path[0], 0.7);
}

TEST(Defects, EulerMaruyamaLemmaBound) {
  // Quadrature defect of one EM step next to the data, against (2/3) sqrt(d) R^2/eps^2 h^(3/2).
  const auto target = two_dirac(1.0);
  const double T = 10.0, eps = 0.5, h = 0.05;
  const TimeGrid grid(T, eps, 190);
  const auto est = one_step_defect(target, Algorithm::euler_maruyama, grid, T - eps - h, h, 4000, 31);
  EXPECT_NEAR(est.bound, 0.029814239699997195, 1e-15);
  EXPECT_TRUE(est.precondition_ok);
  EXPECT_GT(est.value, 0.0);
  EXPECT_LE(est.ci.lower, est.bound);
}

TEST(Defects, EulerOdeLemmaBound) {
  const auto target = two_dirac(1.0);
  const double T = 10.0, eps = 0.5, h = 0.05;
  const TimeGrid grid(T, eps, 190);
  const auto est = one_step_defect(target, Algorithm::euler_ode, grid, T - eps - h, h, 4000, 32);
  EXPECT_NEAR(est.bound, 0.02, 1e-15);
  EXPECT_LE(est.ci.lower, est.bound);
  EXPECT_GT(est.value, 0.0);
}

TEST(Defects, HeunLemmaBoundAndOrder) {
  const auto target = two_dirac(1.0);
  const double T = 10.0, eps = 0.5;
  const TimeGrid grid(T, eps, 190);
  const auto a = one_step_defect(target, Algorithm::heun, grid, T - eps - 0.05, 0.05, 2000, 33);
  const auto b = one_step_defect(target, Algorithm::heun, grid, T - eps - 0.025, 0.025, 2000, 33);
  EXPECT_NEAR(a.bound, 22.0 * 32.0 * 0.05 * 0.05 * 0.05, 1e-12);
  EXPECT_LE(a.ci.lower, a.bound);
  // Local trapezoid error is third order in h.
  EXPECT_NEAR(std::log2(a.value / b.value), 3.0, 0.4);
}

TEST(Coupled, ZeroRefinementIsExactAndGaussianCouplingStartsAtNorm) {
  const auto target = two_dirac(1.0);
  CoupledOptions opt;
  opt.base_steps = 16;
  opt.levels = 1;
  opt.reference_factor_log2 = 0;
  opt.replicates = 500;
  opt.defect_replicates = 0;
  const auto shared_run = coupled_strong_error_sde(target, 3.0, 0.2, opt, 1);
  for (double e : shared_run.levels[0].node_error) EXPECT_EQ(e, 0.0);

  opt.coupling = InitCoupling::gaussian;
  const auto gauss = coupled_strong_error_sde(target, 3.0, 0.2, opt, 1);
  // |X| = 1 for every draw, so the start error is exactly ||X||_L2 = 1.
  EXPECT_NEAR(gauss.levels[0].node_error[0], 1.0, 1e-12);
  // Same path on both sides: the gap only contracts.
  const auto& e = gauss.levels[0].node_error;
  EXPECT_LE(e.back(), e.front());
}

TEST(Coupled, EulerMaruyamaStrongRate) {
  const auto target = two_dirac(1.0);
  CoupledOptions opt;
  opt.base_steps = 32;
  opt.levels = 5;
  opt.replicates = 2000;
  opt.defect_replicates = 0;
  const auto run = coupled_strong_error_sde(target, 10.0, 0.2, opt, 77);
  const double slope = log2_slope(run);
  EXPECT_GE(slope, 0.75);
  EXPECT_LE(slope, 1.25);
  for (std::size_t l = 1; l < run.levels.size(); ++l) {
    EXPECT_LT(run.levels[l].end_error, run.levels[l - 1].end_error);
  }
  EXPECT_EQ(run.levels[0].node_error.size(), opt.base_steps + 1);
  EXPECT_EQ(run.levels[0].node_error[0], 0.0);
}

TEST(Coupled, OdeRates) {
  const auto target = two_dirac(1.0);
  CoupledOptions opt;
  opt.base_steps = 32;
  opt.levels = 5;
  opt.replicates = 300;
  opt.defect_replicates = 0;
  const double euler = log2_slope(coupled_strong_error_ode(target, 10.0, 0.2, Algorithm::euler_ode, opt, 5));
  const double heun = log2_slope(coupled_strong_error_ode(target, 10.0, 0.2, Algorithm::heun, opt, 5));
  EXPECT_GE(euler, 0.8);
  EXPECT_LE(euler, 1.2);
  EXPECT_GE(heun, 1.7);
  EXPECT_LE(heun, 2.3);
}

TEST(Coupled, LevelsCsvColumns) {
  const auto target = two_dirac(1.0);
  CoupledOptions opt;
  opt.base_steps = 8;
  opt.levels = 2;
  opt.replicates = 50;
  opt.defect_replicates = 50;
  const auto run = coupled_strong_error_ode(target, 2.0, 0.5, Algorithm::euler_ode, opt, 5);
  const auto table = levels_table({run});
  EXPECT_EQ(table.str().substr(0, table.str().find('\n')),
            "algorithm,h,level,end_error_L2,ci_halfwidth,defect_max,defect_bound");
  ASSERT_EQ(table.rows().size(), 2u);
  EXPECT_EQ(table.rows()[0][0], "euler-ode");
  EXPECT_GT(run.levels[0].defect_max, 0.0);
  EXPECT_GT(run.levels[0].defect_bound, 0.0);
}
