// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero if any fails.
// Runtime limits are part of each criterion and are measured here.

#include <Eigen/Eigenvalues>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "test_support.hpp"
#include "wassdiff/wassdiff.hpp"

using namespace wassdiff;
namespace wt = wassdiff::testing;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

TargetDistribution random_target(rng::Stream& s, std::size_t dim, double tau) {
  const std::size_t m = 1 + static_cast<std::size_t>(s.uniform() * 6);
  std::vector<double> pts(m * dim), w(m);
  for (double& p : pts) p = 4.0 * (s.uniform() - 0.5);
  for (double& x : w) x = 0.05 + s.uniform();
  return make_dirac_mixture(dim, pts, w, tau);
}

std::vector<std::vector<double>> atoms(const TargetDistribution& t) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < t.size(); ++i) out.emplace_back(t.point(i).begin(), t.point(i).end());
  return out;
}

StudyResult study(const std::string& name, const std::string& json) {
  return run_study(resolve_config(ConfigSource::from_text(json, name + " config"), name));
}

/// Every check of a study must pass; failing names go into the detail.
void require_study(Outcome& o, const StudyResult& r) {
  for (const auto& c : r.checks) o.require(c.pass, c.name + " = " + num(c.value));
}

double check_value(const StudyResult& r, const std::string& name) {
  for (const auto& c : r.checks) {
    if (c.name == name) return c.value;
  }
  return NAN;
}

// AC1
Outcome score_correctness() {
  Outcome o;
  rng::Stream s(9001, "ac1", 0);
  double worst_grad = 0.0, worst_hess = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + trial % 3;
    const double tau = trial % 2 ? 0.3 * s.uniform() : 0.0;
    const auto t = random_target(s, d, tau);
    const auto pts = atoms(t);
    const double time = 0.1 + 4.9 * s.uniform();
    std::vector<double> x(d);
    for (double& v : x) v = 3 * s.normal();
    const auto sc = score(t, time, x);
    const double step = 1e-5 * (1.0 + norm(x));
    double err2 = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      auto f = [&](double v) {
        auto y = x;
        y[k] = v;
        return wt::mixture_log_density(pts, t.weights, time + tau, y);
      };
      const double fd = wt::central_diff(f, x[k], step);
      err2 += (fd - sc[k]) * (fd - sc[k]);
    }
    worst_grad = std::max(worst_grad, std::sqrt(err2) / std::max(norm(sc), 1.0));

    const Eigen::MatrixXd h = hessian(t, time, x);
    const double hstep = 1e-4 * (1.0 + norm(x));
    Eigen::MatrixXd fd(d, d);
    for (std::size_t k = 0; k < d; ++k) {
      for (std::size_t j = 0; j < d; ++j) {
        auto f = [&](double v) {
          auto y = x;
          y[k] = v;
          return score(t, time, y)[j];
        };
        fd(j, k) = wt::central_diff(f, x[k], hstep);
      }
    }
    worst_hess = std::max(worst_hess, (fd - h).norm() / std::max(h.norm(), 1.0));
  }
  o.require(worst_grad < 1e-6, "score vs log-density differences " + num(worst_grad));
  o.require(worst_hess < 1e-5, "Hessian vs score differences " + num(worst_hess));
  o.detail = o.pass ? "max rel. errors " + num(worst_grad) + " / " + num(worst_hess) : o.detail;
  return o;
}

// AC2
Outcome lemma1() {
  Outcome o;
  rng::Stream s(9002, "ac2", 0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 1 + trial % 3;
    const double tau = trial % 4 == 0 ? 0.5 * s.uniform() : 0.0;
    const auto t = random_target(s, d, tau);
    const double r2 = t.radius * t.radius;
    const double time = 1e-2 + (10.0 * std::max(r2, 1e-2) - 1e-2) * s.uniform();
    const double eff = time + tau;
    std::vector<double> x(d);
    for (double& v : x) v = s.normal();
    const double scale = (t.radius + 5.0 * std::sqrt(time)) * s.uniform() / std::max(norm(x), 1e-12);
    for (double& v : x) v *= scale;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hessian(t, time, x));
    if (eig.eigenvalues().minCoeff() < -1.0 / eff - 1e-9 ||
        eig.eigenvalues().maxCoeff() > -1.0 / eff + r2 / (eff * eff) + 1e-9) {
      o.require(false, "containment fails at trial " + std::to_string(trial));
      break;
    }
  }
  auto sech2 = [](double z) { return 1.0 / (std::cosh(z) * std::cosh(z)); };
  double worst = 0.0;
  for (double r : {0.5, 1.0, 2.0}) {
    const auto t = two_dirac(r);
    for (double time : {0.1, 1.0, 10.0}) {
      double best = -HUGE_VAL, arg = HUGE_VAL;
      const double span = 10.0 * (r + std::sqrt(time));
      for (int i = -2000; i <= 2000; ++i) {
        const std::vector<double> x{span * i / 2000.0};
        const double v = hessian(t, time, x)(0, 0);
        worst = std::max(worst, std::abs(v - (-1.0 / time + r * r / (time * time) * sech2(x[0] * r / time))));
        if (v > best) best = v, arg = x[0];
      }
      o.require(arg == 0.0, "supremum not at x = 0");
      o.require(std::abs(best - (-1.0 / time + r * r / (time * time))) < 1e-10, "supremum value");
    }
  }
  o.require(worst < 1e-10, "sech^2 formula off by " + num(worst));
  if (o.pass) o.detail = "1000 draws contained; sech^2 max error " + num(worst);
  return o;
}

// AC3
Outcome one_step_defects() {
  Outcome o;
  const auto target = two_dirac(1.0);
  const double T = 10.0, eps = 0.5;
  const TimeGrid grid(T, eps, 190);
  struct Config {
    double t, h;
  };
  // Last steps before T - eps, where the lemma bounds are tightest, plus mid-path steps.
  const std::vector<Config> configs{{T - eps - 0.0125, 0.0125}, {T - eps - 0.025, 0.025}, {T - eps - 0.05, 0.05},
                                    {T - eps - 0.1, 0.1},       {5.0, 0.1}};
  DefectOptions opt;
  double worst_ratio = 0.0;
  for (Algorithm alg : {Algorithm::euler_ode, Algorithm::heun, Algorithm::euler_maruyama}) {
    for (std::size_t k = 0; k < configs.size(); ++k) {
      const auto [t, h] = configs[k];
      const auto est = one_step_defect(target, alg, grid, t, h, 10000, 777 + k, opt);
      worst_ratio = std::max(worst_ratio, est.ci.upper / est.bound);
      o.require(est.precondition_ok, std::string(to_string(alg)) + " precondition");
      o.require(est.ci.upper <= est.bound, std::string(to_string(alg)) + " t=" + num(t) + " h=" + num(h) +
                                               " upper " + num(est.ci.upper) + " > bound " + num(est.bound));
    }
  }
  if (o.pass) o.detail = "15 configs, largest upper-CI/bound = " + num(worst_ratio);
  return o;
}

// AC4
Outcome rates() {
  Outcome o;
  const auto r = study("rates", R"({
    "seed": 4004,
    "target": {"points": [[-1.0], [1.0]]},
    "grid": {"T": 10.0, "epsilon": 0.2},
    "h_sweep": {"h0": 0.03828125, "factor": 0.5, "count": 5},
    "replicates": 10000,
    "ode_replicates": 10000,
    "defect_replicates": 0,
    "corrupted": {"eps_bar": 0.05, "lipschitz": 0.01, "samples": 10000}
  })");
  require_study(o, r);
  if (o.pass) {
    o.detail = "slopes EM " + num(check_value(r, "slope[euler-maruyama]")) + ", Euler " +
               num(check_value(r, "slope[euler-ode]")) + ", Heun " + num(check_value(r, "slope[heun]")) +
               ", bound term " + num(check_value(r, "bound-slope[corrupted euler-maruyama]")) + "; N = 256..4096";
  }
  return o;
}

// AC5
Outcome bound_dominance() {
  Outcome o;
  const auto r = study("bounds-check", R"({
    "seed": 5005,
    "target": {"points": [[-1.0], [1.0]]},
    "grid": {"T": 10.0, "epsilon": 0.5},
    "propositions": ["prop5", "prop6", "prop7", "prop8"],
    "h_sweep": {"h0": 0.2375, "factor": 0.5, "count": 3},
    "samples": 4096,
    "w2": "assignment",
    "eps_bar": 0.05,
    "corruption_lipschitz": 0.01,
    "min_valid_configs": 3
  })");
  require_study(o, r);
  const double threshold = r.results["init_threshold"].get<double>();
  o.require(threshold <= 10.0, "T below the calibrated init threshold " + num(threshold));
  for (const auto& [name, p] : r.results["propositions"].items()) {
    for (const auto& row : p["rows"]) {
      o.require(row["w2_method"] == "exact-assignment", name + " not using exact assignment");
    }
  }
  if (o.pass) o.detail = "4 propositions x 3 valid grids, init threshold " + num(threshold);
  return o;
}

// AC6
Outcome init_asymptotics() {
  Outcome o;
  const auto r = study("init-asymptotics", R"({
    "seed": 6006,
    "target": {"points": [[-1.0], [1.0]]},
    "horizons": [25, 100, 400],
    "samples": 4096,
    "quantile_nodes": 100000
  })");
  require_study(o, r);
  if (o.pass) {
    std::string ratios;
    for (const auto& row : r.results["rows"]) ratios += (ratios.empty() ? "" : ", ") + num(row["ratio"].get<double>());
    o.detail = "ratios " + ratios;
  }
  return o;
}

// AC7
Outcome early_stopping() {
  Outcome o;
  const auto one = study("early-stopping", R"({
    "seed": 7007, "target": {"points": [[-1.0], [1.0]]}, "epsilons": [0.01, 0.1, 1.0], "samples": 4096})");
  const auto two = study("early-stopping", R"({
    "seed": 7008,
    "target": {"points": [[1.0, 0.0], [-0.5, 0.8660254037844386], [-0.5, -0.8660254037844386]]},
    "epsilons": [0.01, 0.1, 1.0], "samples": 2048})");
  require_study(o, one);
  require_study(o, two);
  if (o.pass) o.detail = "d = 1 and d = 2, three epsilons each";
  return o;
}

// AC8
Outcome propagation() {
  Outcome o;
  rng::Stream s(9008, "ac8", 0);
  for (int trial = 0; trial < 200 && o.pass; ++trial) {
    const double r = 0.2 + 2.0 * s.uniform();
    const double eps = r * r * (0.1 + 0.9 * s.uniform());
    const double horizon = eps * (2.0 + 200.0 * s.uniform());
    const double lip = 2.0 * s.uniform() * r * r / (eps * eps);
    const double min_steps = std::max(2.0 * (horizon - eps) / eps, (horizon - eps) * horizon * lip * lip / 240.0);
    const std::size_t steps =
        static_cast<std::size_t>(std::ceil(min_steps)) + static_cast<std::size_t>(s.uniform() * 500);
    const TimeGrid grid(horizon, eps, steps);
    for (auto flavor : {PropagationFlavor::ode_half_step, PropagationFlavor::sde_full_step, PropagationFlavor::heun}) {
      const auto p = propagation_product(grid, r, flavor, lip);
      bool ok = p.precondition_ok && std::isfinite(p.sum) && p.sum <= p.sum_bound * (1 + 1e-12);
      for (std::size_t n = 0; n <= steps; ++n) ok = ok && p.products[n] <= p.product_bounds[n] * (1 + 1e-12);
      if (flavor == PropagationFlavor::sde_full_step) ok = ok && p.sum_squares <= p.sum_squares_bound * (1 + 1e-12);
      o.require(ok, "draw " + std::to_string(trial) + " violates a bound");
    }
  }
  if (o.pass) o.detail = "200 draws x 3 flavours";
  return o;
}

// AC9
Outcome explosion() {
  Outcome o;
  const auto r = study("explosion", R"({
    "seed": 9009,
    "target": {"points": [[-1.0], [1.0]]},
    "grid": {"T": 10.0, "epsilon": 0.1, "N": 500},
    "alphas": [0.0, 1.0],
    "deltas": [0.5, 1.0, 5.0],
    "replicates": 100000,
    "toy": {"alpha": 1.0, "z0": 16.0, "tolerance": 0.01}
  })");
  require_study(o, r);
  if (o.pass) {
    std::string lows;
    for (const auto& d : r.results["alphas"][1]["by_delta"]) lows += (lows.empty() ? "" : ", ") + num(d["ci_lower"].get<double>());
    o.detail = "M = 1e5; lower CI edges " + lows + "; toy tau " + num(check_value(r, "toy-blowup-time"));
  }
  return o;
}

// AC10
Outcome w2_integrity() {
  Outcome o;
  const auto r = study("w2-selftest", R"({
    "seed": 10010, "triples": 50, "dim": 2, "sort_size": 1000, "gaussian_samples": 2048})");
  require_study(o, r);
  if (o.pass) o.detail = "axioms on 50 triples, assignment = sorting, Gaussian within 2 noise floors";
  return o;
}

// AC11
Outcome reproducibility() {
  Outcome o;
  const std::vector<std::pair<std::string, std::string>> configs{
      {"rates", R"({"seed": 1, "target": {"points": [[-1.0], [1.0]]}, "grid": {"T": 4.0, "epsilon": 0.25},
                   "h_sweep": {"h0": 0.234375, "count": 3}, "replicates": 300, "ode_replicates": 100,
                   "defect_replicates": 50, "corrupted": {"samples": 512}})"},
      {"explosion", R"({"seed": 2, "target": {"points": [[-1.0], [1.0]]},
                       "grid": {"T": 10.0, "epsilon": 0.1, "N": 100}, "replicates": 500})"},
      {"bounds-check", R"({"seed": 3, "target": {"points": [[1.0, 0.0], [-1.0, 0.5]]}, "samples": 256,
                          "init_threshold": {"horizons": [1, 4, 16], "samples": 256}})"}};
  for (const auto& [name, json] : configs) {
    std::vector<StudyResult> runs;
    for (int threads : {1, 4}) {
      ConfigOverrides ov;
      ov.threads = threads;
      runs.push_back(run_study(resolve_config(ConfigSource::from_text(json, name), name, ov)));
    }
    o.require(runs[0].report_text() == runs[1].report_text(), name + " report differs");
    o.require(runs[0].files == runs[1].files, name + " tables or plots differ");
  }
  if (o.pass) o.detail = "rates, explosion, bounds-check byte-identical at 1 and 4 threads";
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* id;
    double limit_seconds;  // NaN: no runtime limit
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"AC1 score correctness", 10, score_correctness},
      {"AC2 Lemma 1 containment and tightness", 10, lemma1},
      {"AC3 one-step defect bounds", 120, one_step_defects},
      {"AC4 convergence rates", 300, rates},
      {"AC5 end-to-end bound dominance", 600, bound_dominance},
      {"AC6 initialization asymptotics", 30, init_asymptotics},
      {"AC7 early stopping", 60, early_stopping},
      {"AC8 propagation-product dominance", 5, propagation},
      {"AC9 explosion", 180, explosion},
      {"AC10 W2 estimator integrity", 60, w2_integrity},
      {"AC11 reproducibility", NAN, reproducibility},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isnan(c.limit_seconds) && seconds > c.limit_seconds) {
      o.pass = false;
      o.detail += (o.detail.empty() ? "" : "; ") + std::string("runtime over ") + num(c.limit_seconds) + " s";
    }
    std::printf("%s %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", c.id, seconds, o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
