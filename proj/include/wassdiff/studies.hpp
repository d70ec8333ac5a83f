#pragma once

// The study suites behind the command-line tool. Each study reads its parameters from a
// resolved configuration, runs the estimators, and returns checks, results and file
// contents; write_outputs() puts them on disk.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "bounds.hpp"
#include "config.hpp"
#include "error.hpp"
#include "explosion.hpp"
#include "io.hpp"
#include "plot.hpp"
#include "rng.hpp"
#include "samplers.hpp"
#include "score.hpp"
#include "target.hpp"
#include "transport.hpp"

namespace wassdiff {

inline constexpr int kReportSchema = 1;

struct Check {
  std::string name;
  bool pass = false;
  double value = 0.0;
  double min = std::numeric_limits<double>::quiet_NaN();  // NaN: no lower limit
  double max = std::numeric_limits<double>::quiet_NaN();  // NaN: no upper limit
  std::string detail;
};

/// Builds a check from a value and optional limits (inclusive).
inline Check make_check(std::string name, double value, double min, double max,
                        std::string detail = {}) {
  Check c{std::move(name), true, value, min, max, std::move(detail)};
  if (!std::isnan(min) && !(value >= min)) c.pass = false;
  if (!std::isnan(max) && !(value <= max)) c.pass = false;
  if (std::isnan(value)) c.pass = false;
  return c;
}

inline nlohmann::json to_json(const Check& c) {
  auto limit = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  return {{"name", c.name}, {"pass", c.pass}, {"value", c.value},
          {"min", limit(c.min)}, {"max", limit(c.max)}, {"detail", c.detail}};
}

struct StudyResult {
  std::string study;
  nlohmann::json config;
  std::vector<Check> checks;
  nlohmann::json results = nlohmann::json::object();
  std::map<std::string, std::string> files;  // file name -> contents, besides report.json

  bool all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
  }
  int exit_code() const { return all_pass() ? 0 : 2; }

  nlohmann::json report() const {
    nlohmann::json checks_json = nlohmann::json::array();
    for (const auto& c : checks) checks_json.push_back(to_json(c));
    nlohmann::json names = nlohmann::json::array();
    for (const auto& [name, _] : files) names.push_back(name);
    return {{"schema", kReportSchema}, {"study", study},   {"config", config},
            {"checks", checks_json},   {"all_pass", all_pass()}, {"results", results},
            {"files", names}};
  }

  std::string report_text() const { return report().dump(2) + "\n"; }
};

inline void write_outputs(const StudyResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "report.json", result.report_text());
  for (const auto& [name, contents] : result.files) write_text_file(dir / name, contents);
}

// ---------------------------------------------------------------------------
// Shared helpers

namespace detail {

/// Independent seed for a named part of a study.
inline std::uint64_t sub_seed(std::uint64_t seed, std::string_view label) {
  return rng::splitmix64(seed ^ rng::splitmix64(rng::fnv1a(label)));
}

inline W2Estimate estimate_w2(const SampleBatch& a, const SampleBatch& b, const std::string& method) {
  return method == "assignment" ? w2_exact(a, b) : w2_empirical(a, b);
}

/// Sampling scale for comparing sampler output (close to X_eps) with draws of X: the larger
/// of the two self-distances at the same batch size.
inline double comparison_floor(const TargetDistribution& target, double eps, std::size_t n,
                               std::uint64_t seed) {
  return std::max(noise_floor(target, 0.0, n, seed), noise_floor(target, eps, n, seed + 1));
}

inline std::string fmt(double v) { return format_number(v); }

/// "name[key=v]", or "name[a,key=v]" when the name already ends in a bracket.
inline std::string label_with(const std::string& base, const std::string& key, double v) {
  if (!base.empty() && base.back() == ']') return base.substr(0, base.size() - 1) + "," + key + "=" + fmt(v) + "]";
  return base + "[" + key + "=" + fmt(v) + "]";
}

inline void check_sample_size(Section& s, const std::string& key, std::size_t n,
                              const TargetDistribution* target, bool assignment) {
  const bool needs_assignment = assignment || (target && target->dim > 1);
  if (needs_assignment && n > kMaxAssignmentSize) {
    s.fail(key, "exact assignment is limited to " + std::to_string(kMaxAssignmentSize) +
                    " samples; subsample or use a 1-D target");
  }
}

struct Grid {
  double horizon = 10.0;
  double epsilon = 0.2;
};

inline Grid read_grid(Section& top, double default_t, double default_eps) {
  Section g = top.child("grid");
  Grid out;
  out.horizon = g.positive("T", default_t);
  out.epsilon = g.positive("epsilon", default_eps);
  if (out.epsilon >= out.horizon) g.fail("epsilon", "must be smaller than T");
  g.finish();
  return out;
}

/// Geometric sweep of step sizes h0 * factor^k, each dividing T - eps into whole steps.
inline std::vector<std::size_t> read_sweep(Section& top, const Grid& grid, std::size_t default_base,
                                           std::size_t default_count, bool dyadic) {
  Section s = top.child("h_sweep");
  const double span = grid.horizon - grid.epsilon;
  const double h0 = s.positive("h0", span / static_cast<double>(default_base));
  const double factor = s.positive("factor", 0.5);
  const std::size_t count = s.integer("count", default_count, 3);
  s.finish();
  if (factor >= 1.0) s.fail("factor", "must be < 1");
  if (dyadic && factor != 0.5) s.fail("factor", "the coupled sweep needs factor 0.5");
  std::vector<std::size_t> steps;
  double h = h0;
  for (std::size_t k = 0; k < count; ++k, h *= factor) {
    const double n = span / h;
    const double rounded = std::round(n);
    if (rounded < 1.0 || std::abs(n - rounded) > 1e-6 * rounded) {
      s.fail("h0", "step " + format_number(h) + " does not divide T - epsilon into whole steps");
    }
    if (rounded > 1e7) s.fail("count", "sweep goes past 1e7 steps");
    steps.push_back(static_cast<std::size_t>(rounded));
  }
  return steps;
}

inline std::vector<double> default_threshold_horizons() {
  return {1, 2, 4, 8, 16, 32, 64, 128, 256};
}

struct InitThresholdParams {
  std::vector<double> horizons;
  std::size_t samples = 1024;
};

inline InitThresholdParams read_init_threshold(Section& top) {
  Section s = top.child("init_threshold");
  InitThresholdParams p;
  p.horizons = s.positives("horizons", default_threshold_horizons());
  p.samples = s.integer("samples", 1024, 2);
  s.finish();
  if (!std::is_sorted(p.horizons.begin(), p.horizons.end())) s.fail("horizons", "must be ascending");
  if (p.samples > kMaxAssignmentSize) s.fail("samples", "must be <= 4096");
  return p;
}

inline void record_divergence(StudyResult& out, const std::string& where, const DivergenceError& e) {
  out.checks.push_back(
      {"no-divergence[" + where + "]", false, static_cast<double>(e.step()), NAN, NAN, e.what()});
}

}  // namespace detail

// ---------------------------------------------------------------------------
// rates

struct RatesParams {
  detail::Grid grid;
  std::vector<Algorithm> algorithms;
  std::vector<std::size_t> steps;  // one entry per level
  std::size_t replicates = 2000;
  std::size_t ode_replicates = 300;
  std::size_t defect_replicates = 500;
  std::size_t reference_factor_log2 = 3;
  InitCoupling coupling = InitCoupling::shared;
  bool corrupted = true;
  double eps_bar = 0.05;
  double lipschitz = 0.01;
  std::size_t corrupted_samples = 4096;
  std::string w2 = "auto";
  detail::InitThresholdParams init;
};

inline std::vector<Algorithm> read_algorithms(Section& top, std::vector<std::string> fallback) {
  const auto names = top.texts("algorithms", std::move(fallback));
  std::vector<Algorithm> algs;
  std::vector<std::string> canonical;
  for (const auto& n : names) {
    Algorithm a;
    try {
      a = parse_algorithm(n);
    } catch (const Error&) {
      top.fail("algorithms", "unknown algorithm '" + n + "' (euler-maruyama, euler-ode, heun)");
    }
    if (std::find(algs.begin(), algs.end(), a) != algs.end()) top.fail("algorithms", "duplicate '" + n + "'");
    algs.push_back(a);
    canonical.push_back(to_string(a));
  }
  top.resolved("algorithms") = canonical;
  return algs;
}

inline RatesParams read_rates(Section& top, const TargetDistribution& target) {
  RatesParams p;
  p.grid = detail::read_grid(top, 10.0, 0.2);
  p.algorithms = read_algorithms(top, {"euler-maruyama", "euler-ode", "heun"});
  p.steps = detail::read_sweep(top, p.grid, 32, 5, true);
  p.replicates = top.integer("replicates", 2000, 2);
  p.ode_replicates = top.integer("ode_replicates", 300, 2);
  p.defect_replicates = top.integer("defect_replicates", 500);
  if (p.defect_replicates == 1) top.fail("defect_replicates", "must be 0 (off) or >= 2");
  p.reference_factor_log2 = top.integer("reference_factor_log2", 3);
  if (p.reference_factor_log2 > 8) top.fail("reference_factor_log2", "must be <= 8");
  const std::size_t finest = p.steps.back() << p.reference_factor_log2;
  if (finest > (std::size_t{1} << 22)) top.fail("reference_factor_log2", "SDE reference grid exceeds 2^22 steps");
  p.coupling = top.choice("coupling", {"shared", "gaussian"}, "shared") == "shared" ? InitCoupling::shared
                                                                                    : InitCoupling::gaussian;
  Section c = top.child("corrupted");
  p.corrupted = c.flag("enabled", true);
  p.eps_bar = c.positive("eps_bar", 0.05);
  p.lipschitz = c.number("lipschitz", 0.01);
  if (p.lipschitz < kMinCorruptionFrequency * p.eps_bar) {
    c.fail("lipschitz", "must be >= 1e-3 * eps_bar");
  }
  p.corrupted_samples = c.integer("samples", 4096, 2);
  p.w2 = c.choice("w2", {"auto", "assignment"}, "auto");
  detail::check_sample_size(c, "samples", p.corrupted_samples, &target, p.w2 == "assignment");
  c.finish();
  p.init = detail::read_init_threshold(top);
  return p;
}

inline double calibrated_threshold(const TargetDistribution& target,
                                   const detail::InitThresholdParams& p, std::uint64_t seed) {
  return calibrate_init_threshold(target, p.horizons, p.samples, detail::sub_seed(seed, "init-threshold"));
}

inline void run_rates(const ExperimentConfig& cfg, const RatesParams& p, StudyResult& out) {
  const TargetDistribution& target = *cfg.target;
  const double T = p.grid.horizon, eps = p.grid.epsilon;
  CoupledOptions opt;
  opt.base_steps = p.steps.front();
  opt.levels = p.steps.size();
  opt.reference_factor_log2 = p.reference_factor_log2;
  opt.coupling = p.coupling;
  opt.defect_replicates = p.defect_replicates;
  opt.threads = cfg.threads;

  const std::pair<double, double> ranges[] = {{0.75, 1.25}, {0.8, 1.2}, {1.7, 2.3}};
  std::vector<CoupledRun> runs;
  std::vector<Series> series;
  nlohmann::json per_alg = nlohmann::json::object();
  for (Algorithm alg : p.algorithms) {
    const std::string name = to_string(alg);
    const std::uint64_t seed = detail::sub_seed(cfg.seed, "rates/" + name);
    CoupledRun run;
    try {
      if (alg == Algorithm::euler_maruyama) {
        opt.replicates = p.replicates;
        run = coupled_strong_error_sde(target, T, eps, opt, seed);
      } else {
        opt.replicates = p.ode_replicates;
        run = coupled_strong_error_ode(target, T, eps, alg, opt, seed);
      }
    } catch (const DivergenceError& e) {
      detail::record_divergence(out, name, e);
      continue;
    }
    Series s{{}, {}, name};
    nlohmann::json levels = nlohmann::json::array();
    for (const auto& lr : run.levels) {
      s.x.push_back(lr.h);
      s.y.push_back(lr.end_error);
      levels.push_back({{"level", lr.level}, {"steps", lr.steps}, {"h", lr.h},
                        {"end_error", lr.end_error}, {"ci_lower", lr.end_ci.lower},
                        {"ci_upper", lr.end_ci.upper}, {"defect_max", lr.defect_max},
                        {"defect_bound", lr.defect_bound}});
      const bool defect_valid = discretization_bounds(target.dim, target.radius, eps, lr.h).precondition_ok;
      if (p.defect_replicates >= 2 && defect_valid) {
        out.checks.push_back(make_check(detail::label_with("one-step-defect[" + name + "]", "h", lr.h),
                                        lr.defect_max, NAN, lr.defect_bound,
                                        "largest of the final-step and mid-path defects"));
      }
    }
    const bool fit_ok = std::all_of(s.y.begin(), s.y.end(), [](double e) { return e > 0.0 && std::isfinite(e); });
    const auto [lo, hi] = ranges[static_cast<int>(alg)];
    if (fit_ok) {
      const RateFit fit = fit_rate(s.x, s.y);
      per_alg[name] = {{"slope", series_slope(s)}, {"intercept", fit.intercept}, {"r2", fit.r2},
                       {"levels", levels}, {"replicates", run.replicates}};
      out.checks.push_back(make_check("slope[" + name + "]", series_slope(s), lo, hi,
                                      "log-log slope of the L2 strong error against h"));
      series.push_back(std::move(s));
    } else {
      per_alg[name] = {{"slope", nullptr}, {"levels", levels}, {"replicates", run.replicates}};
      out.checks.push_back({"slope[" + name + "]", false, NAN, lo, hi, "zero or non-finite error at some level"});
    }
    runs.push_back(std::move(run));
  }
  out.results["algorithms"] = per_alg;
  out.files["levels.csv"] = levels_table(runs).str();
  if (!series.empty()) {
    out.files["rates.svg"] = render_plot(series, {PlotKind::loglog, "Strong error against step size",
                                                  "step size h", "L2 error at the final node"});
  }

  if (!p.corrupted) return;
  // Corrupted-score Euler-Maruyama: empirical W2 to the data law against the full bound.
  const double threshold = calibrated_threshold(target, p.init, cfg.seed);
  const bool zero_mean = has_zero_mean(target);
  CsvTable table({"steps", "h", "w2", "w2_lower", "noise_floor", "w2_method", "bound_total",
                  "bound_discretization", "precondition_ok"});
  Series empirical{{}, {}, "empirical W2"}, total{{}, {}, "bound total", true},
      disc{{}, {}, "bound discretization term", true};
  nlohmann::json rows = nlohmann::json::array();
  const std::size_t n = p.corrupted_samples;
  const auto data = sample_target(target, n, detail::sub_seed(cfg.seed, "rates/corrupted/data"));
  const double floor = detail::comparison_floor(target, eps, n, detail::sub_seed(cfg.seed, "rates/corrupted/floor"));
  for (std::size_t steps : p.steps) {
    const TimeGrid grid(T, eps, steps);
    const ScoreField field = make_corrupted_field(cfg.target, p.eps_bar, p.lipschitz, grid,
                                                  detail::sub_seed(cfg.seed, "rates/corrupted/field"));
    BoundInputs in;
    in.d = target.dim;
    in.radius = target.radius;
    in.horizon = T;
    in.epsilon = eps;
    in.steps = steps;
    in.eps_bar = p.eps_bar;
    in.zero_mean = zero_mean;
    in.crude_init = !zero_mean;
    in.init_threshold = threshold;
    const BoundReport bound = bound_em(in);
    SampleBatch ys;
    try {
      ys = run_sampler({Algorithm::euler_maruyama, field, grid}, n,
                       detail::sub_seed(cfg.seed, "rates/corrupted/sampler"), cfg.threads);
    } catch (const DivergenceError& e) {
      detail::record_divergence(out, "corrupted euler-maruyama N=" + std::to_string(steps), e);
      continue;
    }
    W2Estimate w2 = detail::estimate_w2(ys, data, p.w2);
    w2.noise_floor = floor;
    table.add_row({std::to_string(steps), detail::fmt(grid.step()), detail::fmt(w2.value),
                   detail::fmt(w2.lower()), detail::fmt(floor), to_string(w2.method),
                   detail::fmt(bound.total), detail::fmt(bound.discretization_propagated),
                   bound.precondition_ok ? "1" : "0"});
    rows.push_back({{"steps", steps}, {"h", grid.step()}, {"w2", w2.value}, {"w2_lower", w2.lower()},
                    {"noise_floor", floor}, {"w2_method", to_string(w2.method)}, {"bound", to_json(bound)}});
    empirical.x.push_back(grid.step());
    empirical.y.push_back(w2.value);
    total.x.push_back(grid.step());
    total.y.push_back(bound.total);
    disc.x.push_back(grid.step());
    disc.y.push_back(bound.discretization_propagated);
    if (bound.precondition_ok) {
      out.checks.push_back(make_check(detail::label_with("bound-dominance[corrupted euler-maruyama]", "h", grid.step()),
                                      w2.lower(), NAN, bound.total, "W2 lower edge against the bound total"));
    }
  }
  nlohmann::json corrupted = {{"eps_bar", p.eps_bar}, {"lipschitz", p.lipschitz}, {"samples", n},
                              {"init_threshold", threshold}, {"rows", rows}};
  if (disc.x.size() >= 2) {
    const double slope = series_slope(disc);
    corrupted["bound_discretization_slope"] = slope;
    corrupted["empirical_slope"] = series_slope(empirical);
    out.checks.push_back(make_check("bound-slope[corrupted euler-maruyama]", slope, 0.3, 0.7,
                                    "slope of the bound's discretization term against h"));
    out.files["bound_vs_empirical.svg"] =
        render_plot({empirical, total, disc}, {PlotKind::loglog, "Corrupted-score Euler-Maruyama",
                                               "step size h", "W2 to the data distribution"});
  }
  out.results["corrupted"] = corrupted;
  out.files["corrupted_em.csv"] = table.str();
}

// ---------------------------------------------------------------------------
// bounds-check

struct BoundsParams {
  detail::Grid grid;
  std::vector<Proposition> propositions;
  std::vector<std::string> proposition_names;
  std::vector<std::size_t> steps;
  std::size_t samples = 4096;
  std::string w2 = "auto";
  double eps_bar = 0.05;
  double lipschitz = 0.01;
  std::size_t min_valid = 1;
  detail::InitThresholdParams init;
};

inline Proposition parse_proposition(const std::string& name) {
  if (name == "prop5") return Proposition::euler_ode;
  if (name == "prop6") return Proposition::heun;
  if (name == "prop7") return Proposition::em;
  if (name == "prop8") return Proposition::em_true_score;
  throw Error(ErrorKind::invalid_input, "unknown proposition '" + name + "'");
}

inline BoundsParams read_bounds(Section& top, const TargetDistribution& target) {
  BoundsParams p;
  if (target.smoothing != 0.0) top.fail("target", "bounds-check needs an unsmoothed target (tau = 0)");
  p.grid = detail::read_grid(top, 10.0, 0.5);
  p.proposition_names = top.texts("propositions", std::vector<std::string>{"prop5", "prop6", "prop7", "prop8"});
  for (const auto& n : p.proposition_names) {
    try {
      p.propositions.push_back(parse_proposition(n));
    } catch (const Error&) {
      top.fail("propositions", "unknown proposition '" + n + "' (prop5, prop6, prop7, prop8)");
    }
  }
  p.steps = detail::read_sweep(top, p.grid, 64, 3, false);
  p.samples = top.integer("samples", 4096, 2);
  p.w2 = top.choice("w2", {"auto", "assignment"}, "auto");
  detail::check_sample_size(top, "samples", p.samples, &target, p.w2 == "assignment");
  p.eps_bar = top.positive("eps_bar", 0.05);
  p.lipschitz = top.number("corruption_lipschitz", 0.01);
  if (p.lipschitz < kMinCorruptionFrequency * p.eps_bar) {
    top.fail("corruption_lipschitz", "must be >= 1e-3 * eps_bar");
  }
  p.min_valid = top.integer("min_valid_configs", 1);
  p.init = detail::read_init_threshold(top);
  return p;
}

inline void run_bounds(const ExperimentConfig& cfg, const BoundsParams& p, StudyResult& out) {
  const TargetDistribution& target = *cfg.target;
  const double T = p.grid.horizon, eps = p.grid.epsilon;
  const double threshold = calibrated_threshold(target, p.init, cfg.seed);
  const bool zero_mean = has_zero_mean(target);
  const std::size_t n = p.samples;
  const auto data = sample_target(target, n, detail::sub_seed(cfg.seed, "bounds/data"));
  const double floor = detail::comparison_floor(target, eps, n, detail::sub_seed(cfg.seed, "bounds/floor"));

  CsvTable table({"proposition", "equation", "sampler", "steps", "h", "w2", "w2_lower", "noise_floor",
                  "w2_method", "bound_total", "early_stopping", "init", "discretization", "score",
                  "precondition_ok"});
  std::vector<Series> series;
  nlohmann::json props = nlohmann::json::object();
  for (std::size_t k = 0; k < p.propositions.size(); ++k) {
    const Proposition prop = p.propositions[k];
    const std::string& name = p.proposition_names[k];
    const bool exact = prop == Proposition::em_true_score;
    const Algorithm alg = prop == Proposition::euler_ode ? Algorithm::euler_ode
                          : prop == Proposition::heun    ? Algorithm::heun
                                                         : Algorithm::euler_maruyama;
    Series emp{{}, {}, name + " empirical"}, bnd{{}, {}, name + " bound", true};
    nlohmann::json rows = nlohmann::json::array();
    std::size_t valid = 0;
    for (std::size_t steps : p.steps) {
      const TimeGrid grid(T, eps, steps);
      const ScoreField field = exact ? ScoreField::exact(cfg.target)
                                     : make_corrupted_field(cfg.target, p.eps_bar, p.lipschitz, grid,
                                                            detail::sub_seed(cfg.seed, "bounds/field"));
      BoundInputs in;
      in.d = target.dim;
      in.radius = target.radius;
      in.horizon = T;
      in.epsilon = eps;
      in.steps = steps;
      in.eps_bar = exact ? 0.0 : p.eps_bar;
      if (prop == Proposition::heun) {
        in.lipschitz = target.radius * target.radius / (eps * eps) + p.lipschitz;
      }
      in.zero_mean = zero_mean;
      in.crude_init = !zero_mean;
      in.init_threshold = threshold;
      const BoundReport bound = bound_for(prop, in);
      const std::string where = name + " N=" + std::to_string(steps);
      SampleBatch ys;
      try {
        ys = run_sampler({alg, field, grid}, n, detail::sub_seed(cfg.seed, "bounds/sampler/" + where), cfg.threads);
      } catch (const DivergenceError& e) {
        detail::record_divergence(out, where, e);
        continue;
      }
      W2Estimate w2 = detail::estimate_w2(ys, data, p.w2);
      w2.noise_floor = floor;
      table.add_row({name, bound.equation, to_string(alg), std::to_string(steps), detail::fmt(grid.step()),
                     detail::fmt(w2.value), detail::fmt(w2.lower()), detail::fmt(floor),
                     to_string(w2.method), detail::fmt(bound.total), detail::fmt(bound.early_stopping),
                     detail::fmt(bound.init_propagated), detail::fmt(bound.discretization_propagated),
                     detail::fmt(bound.score_propagated), bound.precondition_ok ? "1" : "0"});
      rows.push_back({{"steps", steps}, {"h", grid.step()}, {"w2", w2.value}, {"w2_lower", w2.lower()},
                      {"noise_floor", floor}, {"w2_method", to_string(w2.method)}, {"bound", to_json(bound)}});
      emp.x.push_back(grid.step());
      emp.y.push_back(w2.value);
      bnd.x.push_back(grid.step());
      bnd.y.push_back(bound.total);
      if (bound.precondition_ok) {
        ++valid;
        out.checks.push_back(make_check("bound-dominance[" + where + "]", w2.lower(), NAN, bound.total,
                                        "W2 lower edge against " + bound.equation + " total"));
      }
    }
    out.checks.push_back(make_check("valid-configs[" + name + "]", static_cast<double>(valid),
                                    static_cast<double>(p.min_valid), NAN,
                                    "sweep points meeting every precondition"));
    props[name] = {{"sampler", to_string(alg)}, {"score", exact ? "exact" : "corrupted"}, {"rows", rows}};
    if (!emp.x.empty()) {
      series.push_back(std::move(emp));
      series.push_back(std::move(bnd));
    }
  }
  out.results = {{"init_threshold", threshold}, {"noise_floor", floor}, {"propositions", props}};
  out.files["bounds.csv"] = table.str();
  if (!series.empty()) {
    PlotSpec spec{PlotKind::loglog, "Empirical W2 against the bounds", "step size h", "W2"};
    spec.annotate_slopes = false;
    out.files["bounds.svg"] = render_plot(series, spec);
  }
}

// ---------------------------------------------------------------------------
// init-asymptotics

struct InitParams {
  std::vector<double> horizons;
  std::size_t samples = 4096;
  std::size_t nodes = 100000;
};

inline InitParams read_init(Section& top, const TargetDistribution& target) {
  InitParams p;
  p.horizons = top.positives("horizons", std::vector<double>{25, 100, 400});
  if (!std::is_sorted(p.horizons.begin(), p.horizons.end()) ||
      std::adjacent_find(p.horizons.begin(), p.horizons.end()) != p.horizons.end()) {
    top.fail("horizons", "must be strictly ascending");
  }
  p.samples = top.integer("samples", 4096, 2);
  detail::check_sample_size(top, "samples", p.samples, &target, false);
  p.nodes = top.integer("quantile_nodes", 100000, 100);
  return p;
}

inline void run_init(const ExperimentConfig& cfg, const InitParams& p, StudyResult& out) {
  const TargetDistribution& target = *cfg.target;
  CsvTable table({"T", "w2_exact", "w2_empirical", "noise_floor", "asymptote", "crude", "ratio"});
  Series measured{{}, {}, target.dim == 1 ? "W2 (quantile grid)" : "W2 (sampled)"};
  Series asym{{}, {}, "asymptote", true};
  nlohmann::json rows = nlohmann::json::array();
  std::vector<double> ratios;
  for (double T : p.horizons) {
    const auto c = init_error_check(target, T, p.samples, detail::sub_seed(cfg.seed, "init/" + detail::fmt(T)), p.nodes);
    table.add_row({detail::fmt(T), detail::fmt(c.exact), detail::fmt(c.empirical.value),
                   detail::fmt(c.empirical.noise_floor), detail::fmt(c.asymptote), detail::fmt(c.crude),
                   detail::fmt(c.ratio)});
    rows.push_back({{"T", T}, {"w2_exact", c.exact}, {"w2_empirical", c.empirical.value},
                    {"noise_floor", c.empirical.noise_floor}, {"asymptote", c.asymptote},
                    {"crude", c.crude}, {"ratio", c.ratio}, {"ratio_above_one", c.ratio > 1.0}});
    ratios.push_back(c.ratio);
    const double m = std::isnan(c.exact) ? c.empirical.value : c.exact;
    if (m > 0.0) {
      measured.x.push_back(T);
      measured.y.push_back(m);
    }
    if (c.asymptote > 0.0) {
      asym.x.push_back(T);
      asym.y.push_back(c.asymptote);
    }
  }
  const bool zero_mean = has_zero_mean(target);
  out.checks.push_back(make_check("zero-mean-target", zero_mean ? 1.0 : 0.0, 1.0, NAN,
                                  "the asymptote applies to mean-zero targets only"));
  if (zero_mean && !std::isnan(ratios.back())) {
    out.checks.push_back(make_check(detail::label_with("ratio", "T", p.horizons.back()), ratios.back(), 0.8, 1.2,
                                    "W2 divided by ||Sigma||_F / (2 sqrt T) at the largest T"));
    double worst = -HUGE_VAL;  // largest increase of |ratio - 1| between consecutive horizons
    for (std::size_t i = 1; i < ratios.size(); ++i) {
      worst = std::max(worst, std::abs(ratios[i] - 1.0) - std::abs(ratios[i - 1] - 1.0));
    }
    if (ratios.size() >= 2) {
      out.checks.push_back(make_check("monotone-approach", worst, NAN, 0.0,
                                      "largest change of |ratio - 1| between consecutive horizons; must shrink"));
    }
  }
  out.results = {{"zero_mean", zero_mean}, {"rows", rows}};
  out.files["init.csv"] = table.str();
  std::vector<Series> series;
  if (measured.x.size() >= 2) series.push_back(measured);
  if (asym.x.size() >= 2) series.push_back(asym);
  if (!series.empty()) {
    out.files["init.svg"] = render_plot(series, {PlotKind::loglog, "Initialization error against the horizon",
                                                 "horizon T", "W2(law of X_T, Gaussian)"});
  }
}

// ---------------------------------------------------------------------------
// early-stopping

struct EarlyStopParams {
  std::vector<double> epsilons;
  std::size_t samples = 4096;
  std::string w2 = "auto";
};

inline EarlyStopParams read_early(Section& top, const TargetDistribution& target) {
  EarlyStopParams p;
  p.epsilons = top.positives("epsilons", std::vector<double>{0.01, 0.1, 1.0});
  p.samples = top.integer("samples", 4096, 2);
  p.w2 = top.choice("w2", {"auto", "assignment"}, "auto");
  detail::check_sample_size(top, "samples", p.samples, &target, p.w2 == "assignment");
  return p;
}

inline void run_early(const ExperimentConfig& cfg, const EarlyStopParams& p, StudyResult& out) {
  const TargetDistribution& target = *cfg.target;
  const std::size_t n = p.samples;
  const auto xs = sample_target(target, n, detail::sub_seed(cfg.seed, "early/data"));
  CsvTable table({"epsilon", "w2", "noise_floor", "bound", "w2_method"});
  Series w{{}, {}, "W2(X, X_eps)"}, b{{}, {}, "sqrt(d eps)", true};
  nlohmann::json rows = nlohmann::json::array();
  for (double eps : p.epsilons) {
    const std::string tag = detail::fmt(eps);
    const auto xe = forward_marginal_sample(target, eps, n, detail::sub_seed(cfg.seed, "early/noised/" + tag));
    const W2Estimate est = detail::estimate_w2(xs, xe, p.w2);
    const double floor = detail::comparison_floor(target, eps, n, detail::sub_seed(cfg.seed, "early/floor/" + tag));
    const double bound = early_stopping_bound(target.dim, eps);
    table.add_row({tag, detail::fmt(est.value), detail::fmt(floor), detail::fmt(bound), to_string(est.method)});
    rows.push_back({{"epsilon", eps}, {"w2", est.value}, {"noise_floor", floor}, {"bound", bound},
                    {"w2_method", to_string(est.method)}});
    out.checks.push_back(make_check(detail::label_with("early-stopping", "eps", eps), est.value, NAN,
                                    bound + floor, "W2 against sqrt(d eps) plus the noise floor"));
    if (est.value > 0.0) {
      w.x.push_back(eps);
      w.y.push_back(est.value);
    }
    b.x.push_back(eps);
    b.y.push_back(bound);
  }
  out.results = {{"dim", target.dim}, {"samples", n}, {"rows", rows}};
  out.files["early_stopping.csv"] = table.str();
  std::vector<Series> series;
  if (w.x.size() >= 2) series.push_back(w);
  if (b.x.size() >= 2) series.push_back(b);
  if (!series.empty()) {
    out.files["early_stopping.svg"] = render_plot(series, {PlotKind::loglog, "Early-stopping error",
                                                           "epsilon", "W2"});
  }
}

// ---------------------------------------------------------------------------
// explosion

struct ExplosionParams {
  double horizon = 10.0;
  double epsilon = 0.1;
  std::size_t steps = 500;
  std::vector<double> alphas;
  std::vector<double> deltas;
  std::size_t replicates = 10000;
  BlowupOptions blowup;
  double toy_alpha = 1.0;
  double toy_z0 = 16.0;
  double toy_tolerance = 0.01;
};

inline ExplosionParams read_explosion(Section& top) {
  ExplosionParams p;
  Section g = top.child("grid");
  p.horizon = g.positive("T", 10.0);
  p.epsilon = g.positive("epsilon", 0.1);
  p.steps = g.integer("N", 500, 1);
  if (p.epsilon >= p.horizon) g.fail("epsilon", "must be smaller than T");
  g.finish();
  p.alphas = top.numbers("alphas", std::vector<double>{0.0, 1.0});
  for (double a : p.alphas) {
    if (a < 0.0) top.fail("alphas", "entries must be >= 0");
  }
  if (!std::is_sorted(p.alphas.begin(), p.alphas.end()) ||
      std::adjacent_find(p.alphas.begin(), p.alphas.end()) != p.alphas.end()) {
    top.fail("alphas", "must be strictly ascending");
  }
  p.deltas = top.positives("deltas", std::vector<double>{0.5, 1.0, 5.0});
  for (double d : p.deltas) {
    if (d > p.horizon - p.epsilon) top.fail("deltas", "entries must be <= T - epsilon");
  }
  p.replicates = top.integer("replicates", 10000, 100);
  p.blowup.threshold = top.number("threshold", 1e8);
  if (p.blowup.threshold < 1e6) top.fail("threshold", "must be >= 1e6");
  p.blowup.max_refine = static_cast<int>(top.integer("max_refine", 30));
  if (p.blowup.max_refine > 60) top.fail("max_refine", "must be <= 60");
  Section toy = top.child("toy");
  p.toy_alpha = toy.positive("alpha", 1.0);
  p.toy_z0 = toy.positive("z0", 16.0);
  p.toy_tolerance = toy.positive("tolerance", 0.01);
  toy.finish();
  return p;
}

inline void run_explosion(const ExperimentConfig& cfg, const ExplosionParams& p, StudyResult& out) {
  const TimeGrid grid(p.horizon, p.epsilon, p.steps);
  CsvTable probs({"alpha", "delta", "count", "replicates", "p_hat", "ci_lower", "ci_upper"});
  std::vector<Series> series;
  nlohmann::json per_alpha = nlohmann::json::array();
  const std::uint64_t seed = detail::sub_seed(cfg.seed, "explosion/starts");
  double previous = -1.0;
  for (double alpha : p.alphas) {
    const auto study = explosion_probability(cfg.target, alpha, grid, p.deltas, p.replicates, seed,
                                             cfg.threads, p.blowup);
    auto row = [&](const ExplosionProbability& e) {
      probs.add_row({detail::fmt(alpha), detail::fmt(e.delta), std::to_string(e.count),
                     std::to_string(study.replicates), detail::fmt(e.p_hat), detail::fmt(e.ci.lower),
                     detail::fmt(e.ci.upper)});
      return nlohmann::json{{"delta", e.delta}, {"count", e.count}, {"p_hat", e.p_hat},
                            {"ci_lower", e.ci.lower}, {"ci_upper", e.ci.upper}};
    };
    nlohmann::json by_delta = nlohmann::json::array();
    Series s{{}, {}, "alpha = " + detail::fmt(alpha)};
    for (const auto& e : study.by_delta) {
      by_delta.push_back(row(e));
      s.x.push_back(e.delta);
      s.y.push_back(e.p_hat);
    }
    const auto anywhere = row(study.anywhere);
    per_alpha.push_back({{"alpha", alpha}, {"by_delta", by_delta}, {"anywhere", anywhere}});
    series.push_back(std::move(s));
    out.files["outcomes_alpha_" + detail::fmt(alpha) + ".csv"] = outcomes_table(study).str();

    const std::string tag = detail::fmt(alpha);
    if (alpha == 0.0) {
      out.checks.push_back(make_check("control-no-explosions[alpha=0]",
                                      static_cast<double>(study.anywhere.count), NAN, 0.0,
                                      "trajectories that exploded without the perturbation"));
    } else {
      for (const auto& e : study.by_delta) {
        out.checks.push_back(make_check("explosion-probability[alpha=" + tag + ",delta=" + detail::fmt(e.delta) + "]",
                                        e.ci.lower, 0.0, NAN, "lower edge of the 95% interval, must be > 0"));
        if (out.checks.back().value <= 0.0) out.checks.back().pass = false;
      }
      out.checks.push_back(make_check("monotone-in-alpha[alpha=" + tag + "]", study.anywhere.p_hat,
                                      previous, NAN, "explosion fraction must not drop as alpha grows"));
    }
    previous = study.anywhere.p_hat;
  }

  const double expected = blowup_time_bound(p.toy_alpha, p.toy_z0);
  const auto toy = simulate_comparison_ode(p.toy_alpha, p.toy_z0, 2.0 * expected, expected * 1e-2, p.blowup);
  const double toy_tau = toy.exploded ? toy.tau_hat : HUGE_VAL;
  out.checks.push_back(make_check("toy-blowup-time", toy_tau, expected * (1.0 - p.toy_tolerance),
                                  expected * (1.0 + p.toy_tolerance),
                                  "comparison ODE crossing time against 4 / (alpha sqrt(z0))"));

  out.results = {{"alphas", per_alpha},
                 {"toy", {{"alpha", p.toy_alpha}, {"z0", p.toy_z0}, {"tau_hat", toy.exploded ? nlohmann::json(toy.tau_hat) : nlohmann::json(nullptr)},
                          {"closed_form", expected}}}};
  out.files["probabilities.csv"] = probs.str();
  PlotSpec spec{PlotKind::linear, "Estimated probability of blow-up before delta", "delta", "P(tau <= delta)"};
  out.files["explosion.svg"] = render_plot(series, spec);
}

// ---------------------------------------------------------------------------
// w2-selftest

struct SelftestParams {
  std::size_t triples = 50;
  std::size_t triple_size = 64;
  std::size_t dim = 2;
  std::size_t sort_size = 1000;
  std::size_t brute_size = 6;
  std::size_t brute_trials = 20;
  std::size_t gaussian_samples = 2048;
  double gaussian_shift = 1.0;
  std::vector<std::uint64_t> floor_sizes;
};

inline SelftestParams read_selftest(Section& top) {
  SelftestParams p;
  p.triples = top.integer("triples", 50, 1);
  p.triple_size = top.integer("triple_size", 64, 1);
  p.dim = top.integer("dim", 2, 1);
  p.sort_size = top.integer("sort_size", 1000, 1);
  p.brute_size = top.integer("brute_force_size", 6, 1);
  if (p.brute_size > 8) top.fail("brute_force_size", "must be <= 8");
  p.brute_trials = top.integer("brute_force_trials", 20, 1);
  p.gaussian_samples = top.integer("gaussian_samples", 2048, 2);
  p.gaussian_shift = top.number("gaussian_shift", 1.0);
  p.floor_sizes = top.integers("noise_floor_sizes", std::vector<std::uint64_t>{64, 256, 1024, 4096}, 2);
  for (std::size_t n : {p.triple_size, p.sort_size, p.gaussian_samples}) {
    if (n > kMaxAssignmentSize) top.fail("triple_size", "sample sizes must be <= 4096");
  }
  for (auto n : p.floor_sizes) {
    if (n > kMaxAssignmentSize) top.fail("noise_floor_sizes", "entries must be <= 4096");
  }
  if (!std::is_sorted(p.floor_sizes.begin(), p.floor_sizes.end())) top.fail("noise_floor_sizes", "must be ascending");
  return p;
}

inline void run_selftest(const ExperimentConfig& cfg, const SelftestParams& p, StudyResult& out) {
  using detail::sub_seed;
  CsvTable table({"check", "value", "limit", "pass"});
  auto record = [&](Check c) {
    table.add_row({c.name, detail::fmt(c.value), detail::fmt(std::isnan(c.max) ? c.min : c.max), c.pass ? "1" : "0"});
    out.checks.push_back(std::move(c));
  };
  auto random_batch = [&](std::size_t n, std::size_t d, std::uint64_t seed) {
    SampleBatch b;
    b.dim = d;
    b.data.resize(n * d);
    for (std::size_t i = 0; i < n; ++i) {
      rng::Stream s(seed, "selftest", i);
      const double shift = 3.0 * s.uniform();
      for (std::size_t k = 0; k < d; ++k) b.data[i * d + k] = shift + s.normal();
    }
    return b;
  };

  // Metric axioms on random triples.
  double identity = 0.0, asymmetry = 0.0, triangle = -HUGE_VAL;
  for (std::size_t t = 0; t < p.triples; ++t) {
    const auto a = random_batch(p.triple_size, p.dim, sub_seed(cfg.seed, "triple-a/" + std::to_string(t)));
    const auto b = random_batch(p.triple_size, p.dim, sub_seed(cfg.seed, "triple-b/" + std::to_string(t)));
    const auto c = random_batch(p.triple_size, p.dim, sub_seed(cfg.seed, "triple-c/" + std::to_string(t)));
    const double ab = w2_exact(a, b).value, ba = w2_exact(b, a).value;
    const double bc = w2_exact(b, c).value, ac = w2_exact(a, c).value;
    identity = std::max(identity, w2_exact(a, a).value);
    asymmetry = std::max(asymmetry, std::abs(ab - ba));
    triangle = std::max(triangle, ac - ab - bc);
  }
  record(make_check("identity", identity, NAN, 1e-12, "largest W2(A, A)"));
  record(make_check("symmetry", asymmetry, NAN, 1e-9, "largest |W2(A, B) - W2(B, A)|"));
  record(make_check("triangle", triangle, NAN, 1e-9, "largest W2(A, C) - W2(A, B) - W2(B, C)"));

  // Assignment against sorting on 1-D data.
  {
    const auto a = random_batch(p.sort_size, 1, sub_seed(cfg.seed, "sort-a"));
    const auto b = random_batch(p.sort_size, 1, sub_seed(cfg.seed, "sort-b"));
    const double gap = std::abs(w2_exact(a, b).value - w2_1d(a, b).value);
    record(make_check("assignment-equals-sorting", gap, NAN, 1e-9, "|assignment - quantile| on 1-D data"));
  }

  // Assignment against enumeration of all permutations.
  {
    double worst = 0.0;
    for (std::size_t t = 0; t < p.brute_trials; ++t) {
      const auto a = random_batch(p.brute_size, p.dim, sub_seed(cfg.seed, "brute-a/" + std::to_string(t)));
      const auto b = random_batch(p.brute_size, p.dim, sub_seed(cfg.seed, "brute-b/" + std::to_string(t)));
      std::vector<std::size_t> perm(p.brute_size);
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
      double best = HUGE_VAL;
      do {
        double cost = 0.0;
        for (std::size_t i = 0; i < perm.size(); ++i) {
          for (std::size_t k = 0; k < p.dim; ++k) {
            const double diff = a.row(i)[k] - b.row(perm[i])[k];
            cost += diff * diff;
          }
        }
        best = std::min(best, cost);
      } while (std::next_permutation(perm.begin(), perm.end()));
      const double brute = std::sqrt(best / static_cast<double>(p.brute_size));
      worst = std::max(worst, std::abs(w2_exact(a, b).value - brute) / std::max(brute, 1e-300));
    }
    record(make_check("assignment-equals-brute-force", worst, NAN, 1e-12, "largest relative gap"));
  }

  // Gaussian closed form against the sampled estimate.
  {
    const std::size_t n = p.gaussian_samples;
    const auto a = sample_gaussian(p.dim, 1.0, n, sub_seed(cfg.seed, "gauss-a"));
    auto b = sample_gaussian(p.dim, 1.0, n, sub_seed(cfg.seed, "gauss-b"));
    for (std::size_t i = 0; i < n; ++i) b.data[i * p.dim] += p.gaussian_shift;
    const auto d = static_cast<Eigen::Index>(p.dim);
    Eigen::VectorXd m = Eigen::VectorXd::Zero(d);
    m(0) = p.gaussian_shift;
    const double truth = w2_gaussian(Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d), m,
                                     Eigen::MatrixXd::Identity(d, d)).value;
    const double floor = gaussian_noise_floor(p.dim, 1.0, n, sub_seed(cfg.seed, "gauss-floor"));
    const double sampled = w2_empirical(a, b).value;
    record(make_check("gaussian-closed-form", std::abs(sampled - truth), NAN, 2.0 * floor,
                      "|sampled - closed form| against twice the noise floor"));
    out.results["gaussian"] = {{"closed_form", truth}, {"sampled", sampled}, {"noise_floor", floor}, {"n", n}};
  }

  // Quantile grid on 1-D laws against sorted samples.
  {
    const auto target = two_dirac(1.0);
    const double t = 1.0;
    const std::size_t n = kMaxAssignmentSize;
    const double grid = w2_quantile_grid(mixture_law(target, t), gaussian_law(0.0, 1.0 + t)).value;
    const auto xs = forward_marginal_sample(target, t, n, sub_seed(cfg.seed, "quantile-x"));
    const auto gs = sample_gaussian(1, 1.0 + t, n, sub_seed(cfg.seed, "quantile-g"));
    const double sampled = w2_1d(xs, gs).value;
    const double floor = std::max(noise_floor(target, t, n, sub_seed(cfg.seed, "quantile-floor")),
                                  gaussian_noise_floor(1, 1.0 + t, n, sub_seed(cfg.seed, "quantile-gfloor")));
    record(make_check("quantile-grid-vs-samples", std::abs(sampled - grid), NAN, 2.0 * floor,
                      "|sorted samples - quantile grid| against twice the noise floor"));
  }

  // Noise floor against the batch size.
  CsvTable floors({"n", "noise_floor"});
  Series fs{{}, {}, "noise floor, N(0, 1)"};
  for (std::size_t n : p.floor_sizes) {
    const double f = gaussian_noise_floor(1, 1.0, n, sub_seed(cfg.seed, "floor/" + std::to_string(n)));
    floors.add_row({std::to_string(n), detail::fmt(f)});
    fs.x.push_back(static_cast<double>(n));
    fs.y.push_back(f);
  }
  if (fs.x.size() >= 2) {
    record(make_check("noise-floor-decreases", fs.y.back() / fs.y.front(), NAN, 1.0,
                      "floor at the largest n over the floor at the smallest n"));
    out.files["noise_floor.svg"] = render_plot({fs}, {PlotKind::loglog, "W2 noise floor", "batch size n", "W2"});
  }
  out.files["selftest.csv"] = table.str();
  out.files["noise_floor.csv"] = floors.str();
}

// ---------------------------------------------------------------------------
// Configuration and dispatch

namespace detail {

/// Reads every study parameter, filling in defaults; returns the typed parameters through
/// the callback chosen for the study.
template <class Visit>
void read_study_params(Section& top, const std::string& study, const TargetDistribution* target, Visit&& visit) {
  if (study == "rates") {
    visit(read_rates(top, *target));
  } else if (study == "bounds-check") {
    visit(read_bounds(top, *target));
  } else if (study == "init-asymptotics") {
    visit(read_init(top, *target));
  } else if (study == "early-stopping") {
    visit(read_early(top, *target));
  } else if (study == "explosion") {
    visit(read_explosion(top));
  } else {
    visit(read_selftest(top));
  }
}

}  // namespace detail

/// Validates a configuration and resolves every default. `study` is the command-line study;
/// a "study" key in the file must agree with it.
inline ExperimentConfig resolve_config(const ConfigSource& src, const std::string& study,
                                       const ConfigOverrides& overrides = {}) {
  const auto& names = study_names();
  if (std::find(names.begin(), names.end(), study) == names.end()) {
    throw Error(ErrorKind::invalid_input, "unknown study '" + study + "'");
  }
  ExperimentConfig cfg;
  cfg.study = study;
  cfg.threads = std::max(1, overrides.threads);
  nlohmann::json resolved = nlohmann::json::object();
  Section top(src, src.root(), "", resolved);
  if (top.has("study") && top.text("study") != study) {
    top.fail("study", "configuration is for study '" + src.root()["study"].get<std::string>() +
                          "', not '" + study + "'");
  }
  resolved["study"] = study;
  if (overrides.seed) {
    top.ignore("seed");
    cfg.seed = *overrides.seed;
    resolved["seed"] = cfg.seed;
  } else {
    cfg.seed = top.integer("seed");
  }
  const auto* out_key = top.raw("out");
  if (out_key && !out_key->is_string()) top.fail("out", "expected a string");
  if (overrides.out_dir) {
    cfg.out_dir = *overrides.out_dir;
  } else if (out_key) {
    cfg.out_dir = src.base_dir() / out_key->get<std::string>();
  } else {
    cfg.out_dir = std::filesystem::path("results") / study;
  }
  cfg.target = detail::read_target(top, study != "w2-selftest");
  detail::read_study_params(top, study, cfg.target.get(), [](auto&&) {});
  top.finish();
  resolved.erase("out");
  cfg.resolved = std::move(resolved);
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, const std::string& study,
                                    const ConfigOverrides& overrides = {}) {
  return resolve_config(ConfigSource::from_file(path), study, overrides);
}

/// Runs the configured study. Throws on configuration or runtime errors.
inline StudyResult run_study(const ExperimentConfig& cfg) {
  StudyResult out;
  out.study = cfg.study;
  out.config = cfg.resolved;
  // The run reads its parameters back from the resolved configuration, which is what
  // report.json records.
  const ConfigSource src = ConfigSource::from_text(cfg.resolved.dump(), "<resolved>");
  nlohmann::json scratch;
  Section top(src, src.root(), "", scratch);
  detail::read_study_params(top, cfg.study, cfg.target.get(), [&](const auto& params) {
    using P = std::decay_t<decltype(params)>;
    if constexpr (std::is_same_v<P, RatesParams>) run_rates(cfg, params, out);
    else if constexpr (std::is_same_v<P, BoundsParams>) run_bounds(cfg, params, out);
    else if constexpr (std::is_same_v<P, InitParams>) run_init(cfg, params, out);
    else if constexpr (std::is_same_v<P, EarlyStopParams>) run_early(cfg, params, out);
    else if constexpr (std::is_same_v<P, ExplosionParams>) run_explosion(cfg, params, out);
    else run_selftest(cfg, params, out);
  });
  return out;
}

}  // namespace wassdiff
