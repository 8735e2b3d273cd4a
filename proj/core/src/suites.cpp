#include <algorithm>
#include <cmath>
#include <cstdio>

#include "zoforge/errors.hpp"
#include "zoforge/theorylab.hpp"
#include "zoforge/train.hpp"

namespace zoforge {

namespace {

MonteCarlo monte_carlo(const SuiteOptions& options, std::uint64_t salt, std::size_t samples) {
  MonteCarlo mc;
  mc.samples = samples;
  mc.seed = derive_step_seed(options.seed, salt, 0x7E57);
  mc.workers = options.workers;
  return mc;
}

/// Spectrum with `rank` eigenvalues in [0.2, 1] (the first equal to 1) and
/// the rest zero.
std::vector<double> random_spectrum(std::size_t d, std::size_t rank, Xoshiro256pp& rng) {
  std::vector<double> lambda(d, 0.0);
  for (std::size_t k = 0; k < rank; ++k) lambda[k] = k == 0 ? 1.0 : 0.2 + 0.8 * rng.uniform_open0();
  return lambda;
}

void append(std::vector<CheckReport>& out, std::vector<CheckReport> more) {
  for (auto& r : more) out.push_back(std::move(r));
}

SuiteOutput normratio_suite(const SuiteOptions& o) {
  SuiteOutput out;
  Xoshiro256pp rng(derive_step_seed(o.seed, 0, 0x4E52));
  struct Case {
    std::size_t d, n;
    ZDist dist;
    std::size_t shifts, batch;
  };
  const Case cases[] = {
      {10, 1, ZDist::sphere, 0, 0},  {10, 4, ZDist::sphere, 0, 0},  {100, 1, ZDist::sphere, 0, 0},
      {10, 1, ZDist::gaussian, 0, 0}, {1, 1, ZDist::sphere, 0, 0},  {1, 1, ZDist::gaussian, 0, 0},
      {10, 1, ZDist::sphere, 20, 4},
  };
  std::uint64_t salt = 0;
  for (const auto& c : cases) {
    QuadraticSpec spec;
    spec.eigenvalues = random_spectrum(c.d, std::max<std::size_t>(1, c.d / 2), rng);
    if (c.shifts > 0) spec.example_shifts = gaussian_shifts(c.shifts, c.d, 0.5, Seed{rng()});
    const QuadraticObjective obj(std::move(spec));
    const ParamStore theta = init_params(obj, Seed{rng()}, 1.0);
    out.reports.push_back(check_norm_ratio(obj, theta, c.n, c.dist, monte_carlo(o, salt++, 10000), c.batch));
  }
  return out;
}

SuiteOutput gaussian_cov_suite(const SuiteOptions& o) {
  SuiteOutput out;
  const QuadraticObjective obj(low_rank_quadratic(5, 5));
  ParamStore theta = obj.blueprint();
  for (double& v : theta.values()) v = 1.0;
  out.reports = check_gaussian_covariance(obj, theta, monte_carlo(o, 0, 100000));
  return out;
}

SuiteOutput unbiasedness_suite(const SuiteOptions& o) {
  SuiteOutput out;
  Xoshiro256pp rng(derive_step_seed(o.seed, 0, 0x0B1A5));
  QuadraticSpec spec;
  spec.eigenvalues = random_spectrum(6, 6, rng);
  spec.optimum = {0.5, -0.25, 0.0, 1.0, -1.0, 0.25};
  const QuadraticObjective obj(spec);
  const ParamStore theta = init_params(obj, Seed{rng()}, 1.0);
  const std::vector<double> scale{2.5};
  append(out.reports, check_unbiasedness(obj, theta, EstimatorKind::spsa, 1, {}, monte_carlo(o, 0, 100000)));
  append(out.reports, check_unbiasedness(obj, theta, EstimatorKind::spsa, 4, {}, monte_carlo(o, 1, 100000)));
  append(out.reports,
         check_unbiasedness(obj, theta, EstimatorKind::variance_modified, 1, scale, monte_carlo(o, 2, 100000)));
  append(out.reports, check_unbiasedness(obj, theta, EstimatorKind::expectation_modified, 1, scale,
                                         monte_carlo(o, 3, 100000), true));

  ParamStore at_optimum = obj.blueprint();
  std::copy(spec.optimum.begin(), spec.optimum.end(), at_optimum.values().begin());
  auto trivial = check_unbiasedness(obj, at_optimum, EstimatorKind::spsa, 1, {}, monte_carlo(o, 4, 1000));
  for (auto& r : trivial) {
    r.check = "optimum_" + r.check;
    out.reports.push_back(std::move(r));
  }
  return out;
}

SuiteOutput cubic_suite(const SuiteOptions& o) {
  SuiteOutput out;
  out.reports.push_back(check_cubic_bias_slope(monte_carlo(o, 0, 100000)));
  return out;
}

SuiteOutput reset_suite(const SuiteOptions& o) {
  SuiteOutput out;
  out.reports.push_back(check_reset_identity(10000, derive_step_seed(o.seed, 0, 0x2E5E7)));
  return out;
}

SuiteOutput descent_suite(const SuiteOptions& o) {
  SuiteOutput out;
  Xoshiro256pp rng(derive_step_seed(o.seed, 0, 0xDE5C));
  std::uint64_t salt = 0;
  const auto mc = [&] { return monte_carlo(o, salt++, 10000); };

  for (int k = 0; k < 5; ++k) {
    const std::size_t d = 10 + static_cast<std::size_t>(rng.bounded(91));
    const std::size_t rank = 1 + static_cast<std::size_t>(rng.bounded(std::min<std::uint64_t>(d, 20)));
    const std::size_t n = 1 + static_cast<std::size_t>(rng.bounded(4));
    const std::size_t examples = 8 + static_cast<std::size_t>(rng.bounded(25));
    const std::size_t batch = 1 + static_cast<std::size_t>(rng.bounded(examples - 1));
    QuadraticSpec spec;
    spec.eigenvalues = random_spectrum(d, rank, rng);
    spec.example_shifts = gaussian_shifts(examples, d, 0.3, Seed{rng()});
    const QuadraticObjective obj(std::move(spec));
    const ParamStore theta = init_params(obj, Seed{rng()}, 1.0);
    const double gamma = sphere_gamma(d, obj.effective_rank(), n);
    const double eta = (0.25 + 1.75 * rng.uniform_open0()) / (obj.ell() * gamma);
    append(out.reports,
           check_descent_bound(obj, theta, eta, n, batch, ZDist::sphere, mc(), "random" + std::to_string(k)));
  }

  {
    const QuadraticObjective obj(low_rank_quadratic(20, 20));
    const ParamStore theta = init_params(obj, Seed{rng()}, 1.0);
    const double eta = 1.0 / sphere_gamma(20, 20.0, 2);
    append(out.reports, check_descent_bound(obj, theta, eta, 2, 0, ZDist::sphere, mc(), "identity_d20_n2"));
    append(out.reports, check_descent_bound(obj, theta, 0.0, 2, 0, ZDist::sphere, mc(), "eta_zero"));
  }
  {
    QuadraticSpec spec = low_rank_quadratic(100, 2);
    spec.example_shifts = gaussian_shifts(16, 100, 0.3, Seed{rng()});
    const QuadraticObjective obj(std::move(spec));
    const ParamStore theta = init_params(obj, Seed{rng()}, 1.0);
    const double eta = 1.0 / sphere_gamma(100, 2.0, 1);
    append(out.reports, check_descent_bound(obj, theta, eta, 1, 4, ZDist::sphere, mc(), "rank2_d100_n1"));
  }
  {
    QuadraticSpec spec;
    spec.eigenvalues = random_spectrum(64, 8, rng);
    spec.example_shifts = gaussian_shifts(16, 64, 0.3, Seed{rng()});
    const QuadraticObjective obj(std::move(spec));
    const ParamStore theta = init_params(obj, Seed{rng()}, 1.0);
    const double eta = 1.0 / (obj.ell() * gaussian_gamma(obj.effective_rank(), 2));
    append(out.reports, check_descent_bound(obj, theta, eta, 2, 4, ZDist::gaussian, mc(), "gaussian_d64_n2"));
  }
  return out;
}

std::string rank_runs_csv(const std::vector<RankRun>& runs) {
  std::string csv = "r,d,rep,eta,iterations,predicted\n";
  char buf[160];
  for (const auto& r : runs) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.17g,%llu,%.17g\n", r.r, r.d, r.rep, r.eta,
                  static_cast<unsigned long long>(r.iterations), r.predicted);
    csv += buf;
  }
  return csv;
}

SuiteOutput rankscaling_suite(const SuiteOptions& o) {
  SuiteOutput out;
  constexpr double kTarget = 1e-6;
  constexpr std::size_t kReps = 3;
  const Seed seed = derive_step_seed(o.seed, 0, 0x5CA1);
  std::vector<RankRun> runs;
  const auto add = [&](std::vector<std::size_t> ranks, std::vector<std::size_t> dims) {
    for (auto& r : rank_scaling_runs(ranks, dims, kTarget, kReps, seed)) runs.push_back(r);
  };
  const std::vector<std::size_t> ranks{2, 4, 8, 16, 32};
  add(ranks, {512});
  add({8}, {128, 1024});
  add({10, 100}, {100});
  const std::size_t samples = runs.size();

  std::vector<double> xs, ys, ps;
  for (std::size_t r : ranks) {
    xs.push_back(static_cast<double>(r));
    ys.push_back(mean_iterations(runs, r, 512));
    double pred = 0.0;
    for (const auto& run : runs) {
      if (run.r == r && run.d == 512) pred = run.predicted;
    }
    ps.push_back(pred);
  }
  const LinearFit fit = fit_line(xs, ys);
  const LinearFit pred_fit = fit_line(xs, ps);
  out.reports.push_back(
      CheckReport::make("rankscaling", "fit_r_squared_d512", fit.r_squared, 1.0, 0.1, 0.0, samples, CheckRule::at_least));
  out.reports.push_back(CheckReport::make("rankscaling", "slope_ratio_d512", fit.slope / pred_fit.slope, 1.25, 0.75, 0.0,
                                          samples, CheckRule::within));
  out.reports.push_back(CheckReport::make("rankscaling", "iter_ratio_r16_r4_d512",
                                          mean_iterations(runs, 16, 512) / mean_iterations(runs, 4, 512), 5.0, 3.0, 0.0,
                                          samples, CheckRule::within));
  {
    const double a = mean_iterations(runs, 8, 128);
    const double b = mean_iterations(runs, 8, 512);
    const double c = mean_iterations(runs, 8, 1024);
    const double spread = std::max({a, b, c}) / std::min({a, b, c});
    out.reports.push_back(
        CheckReport::make("rankscaling", "dim_spread_r8", spread, 1.0, 0.3, 0.0, samples, CheckRule::at_most));
    out.reports.push_back(
        CheckReport::make("rankscaling", "dim_doubling_r8_d512_d1024", c / b, 1.0, 0.15, 0.0, samples, CheckRule::within));
  }
  out.reports.push_back(CheckReport::make("rankscaling", "worst_case_ratio_d100",
                                          mean_iterations(runs, 100, 100) / mean_iterations(runs, 10, 100), 10.0, 5.0,
                                          0.0, samples, CheckRule::within));
  out.reports.push_back(check_single_mode_contraction(10, 1.0, monte_carlo(o, 1, 10000)));
  out.files["rankscaling_runs.csv"] = rank_runs_csv(runs);
  return out;
}

SuiteOutput sigmatrace_suite(const SuiteOptions& o) {
  SuiteOutput out;
  DatasetSpec ds;
  ds.kind = DatasetKind::synthetic_linear;
  ds.samples = 50;
  ds.features = 5;
  ds.seed = derive_step_seed(o.seed, 0, 0x51C);
  ds.margin = 0.1;
  const LogisticObjective obj(make_dataset(ds), LogisticLoss::exp_margin);

  RunConfig run;
  run.master = derive_step_seed(o.seed, 1, 0x51C);
  run.steps = 200;
  run.batch_size = 10;
  run.estimator.epsilon = 1e-3;
  OptimizerConfig opt;
  opt.lr.eta0 = 0.05;
  ParamStore theta = init_params(obj, derive_step_seed(o.seed, 2, 0x51C), 0.1);
  MezoState state(run, opt, obj, theta);
  std::vector<ParamStore> points{theta};
  for (std::uint64_t t = 0; t < run.steps; ++t) {
    mezo_step(theta, obj, state, run);
    points.push_back(theta);
  }
  out.reports.push_back(check_sigma_trace_bound(obj, points, "trajectory_n50_t200"));

  Dataset same;
  same.samples = 8;
  same.features = 3;
  same.classes = 2;
  for (std::size_t i = 0; i < same.samples; ++i) {
    same.x.insert(same.x.end(), {0.5, -1.0, 2.0});
    same.labels.push_back(1);
  }
  const LogisticObjective identical(same, LogisticLoss::exp_margin);
  const std::vector<ParamStore> origin{identical.blueprint()};
  out.reports.push_back(check_sigma_trace_bound(identical, origin, "identical_examples"));

  Dataset one = same;
  one.samples = 1;
  one.x.resize(3);
  one.labels.resize(1);
  const LogisticObjective single(one, LogisticLoss::exp_margin);
  const std::vector<ParamStore> single_origin{single.blueprint()};
  out.reports.push_back(check_sigma_trace_bound(single, single_origin, "single_example"));
  return out;
}

SuiteOutput sgdbaseline_suite(const SuiteOptions& o) {
  SuiteOutput out;
  {
    QuadraticSpec spec;
    spec.eigenvalues = {4.0, 2.0, 1.0};
    const QuadraticObjective obj(spec);
    ParamStore theta = obj.blueprint();
    theta.values()[2] = 3.0;
    constexpr std::uint64_t kSteps = 40;
    const auto losses = sgd_baseline(obj, theta, 1.0 / obj.ell(), kSteps, 0, o.seed);
    const double rate = 1.0 - obj.mu_pl() / obj.ell();
    double worst = 0.0;
    for (std::uint64_t t = 0; t < kSteps; ++t) {
      worst = std::max(worst, std::abs(std::sqrt(losses[t + 1] / losses[t]) - rate));
    }
    out.reports.push_back(
        CheckReport::make("sgdbaseline", "contraction_rate_deviation", worst, 0.0, 1e-12, 0.0, kSteps, CheckRule::at_most));
  }
  {
    QuadraticSpec spec = low_rank_quadratic(10, 4);
    spec.example_shifts = gaussian_shifts(20, 10, 0.5, derive_step_seed(o.seed, 0, 0x5D));
    const QuadraticObjective obj(std::move(spec));
    const ParamStore theta = init_params(obj, derive_step_seed(o.seed, 1, 0x5D), 1.0);
    const auto first = sgd_baseline(obj, theta, 0.5, 100, 5, o.seed);
    const auto second = sgd_baseline(obj, theta, 0.5, 100, 5, o.seed);
    double mismatches = 0.0;
    for (std::size_t k = 0; k < first.size(); ++k) {
      if (std::bit_cast<std::uint64_t>(first[k]) != std::bit_cast<std::uint64_t>(second[k])) mismatches += 1.0;
    }
    out.reports.push_back(CheckReport::make("sgdbaseline", "repeat_mismatches", mismatches, 0.0, 0.0, 0.0,
                                            first.size(), CheckRule::at_most));
    std::string trace = "step,loss\n";
    char buf[64];
    for (std::size_t k = 0; k < first.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g\n", k, first[k]);
      trace += buf;
    }
    out.files["sgdbaseline_trace.csv"] = trace;
  }
  out.reports.push_back(check_zo_sgd_ratio(20, 1, monte_carlo(o, 2, 10000)));
  out.reports.push_back(check_zo_sgd_ratio(20, 4, monte_carlo(o, 3, 10000)));
  return out;
}

SuiteOutput guardrail_suite(const SuiteOptions& o) {
  SuiteOutput out;
  constexpr std::uint64_t kSteps = 3000;
  const Seed seed = derive_step_seed(o.seed, 0, 0x6A7D);
  out.reports.push_back(CheckReport::make("guardrail", "half_rate_log10_ratio", guardrail_log_ratio(0.5, kSteps, seed),
                                          -3.0, 0.0, 0.0, kSteps, CheckRule::at_most));
  out.reports.push_back(CheckReport::make("guardrail", "one_and_half_rate_log10_ratio",
                                          guardrail_log_ratio(1.5, kSteps, seed), 3.0, 0.0, 0.0, kSteps,
                                          CheckRule::at_least));
  return out;
}

using SuiteFn = SuiteOutput (*)(const SuiteOptions&);

struct SuiteEntry {
  const char* name;
  SuiteFn fn;
};

constexpr SuiteEntry kSuites[] = {
    {"normratio", normratio_suite},     {"gaussian_cov", gaussian_cov_suite}, {"unbiasedness", unbiasedness_suite},
    {"cubic", cubic_suite},             {"reset", reset_suite},               {"descent", descent_suite},
    {"rankscaling", rankscaling_suite}, {"sigmatrace", sigmatrace_suite},     {"sgdbaseline", sgdbaseline_suite},
    {"guardrail", guardrail_suite},
};

}  // namespace

std::vector<std::string> suite_names() {
  std::vector<std::string> names;
  for (const auto& s : kSuites) names.emplace_back(s.name);
  return names;
}

SuiteOutput run_suite(std::string_view name, const SuiteOptions& options) {
  for (const auto& s : kSuites) {
    if (name == s.name) return s.fn(options);
  }
  std::string valid;
  for (const auto& s : kSuites) valid += std::string(valid.empty() ? "" : ", ") + s.name;
  throw InvalidArgument("unknown suite '" + std::string(name) + "'; valid suites: " + valid);
}

}  // namespace zoforge
