#pragma once

// Monte Carlo and closed-form checks of the estimator moments and the
// effective-rank convergence theory. Every report stores the numbers its
// verdict was computed from, so a CSV row can be re-checked on its own.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "zoforge/estimators.hpp"
#include "zoforge/objectives.hpp"

namespace zoforge {

/// How measured is compared with predicted.
enum class CheckRule : std::uint8_t {
  /// |measured - predicted| <= tolerance
  within = 0,
  /// measured <= predicted + tolerance
  at_most = 1,
  /// measured >= predicted - tolerance
  at_least = 2,
  /// |measured - predicted| > tolerance: the check expects a discrepancy.
  differs = 3,
};

std::string_view to_string(CheckRule rule) noexcept;
CheckRule parse_check_rule(std::string_view text);

struct CheckReport {
  std::string suite;
  std::string check;
  double measured = 0.0;
  double predicted = 0.0;
  double tolerance = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
  CheckRule rule = CheckRule::within;
  bool pass = false;

  /// Builds a report and sets `pass` from the rule.
  static CheckReport make(std::string suite, std::string check, double measured, double predicted, double tolerance,
                          double std_error, std::size_t samples, CheckRule rule);
  /// Verdict recomputed from the stored numbers.
  bool evaluate() const noexcept;
};

/// `SUITE suite/check PASS|FAIL measured=... predicted=... tol=...`
std::string summary_line(const CheckReport& report);

/// Header plus one row per report:
/// suite,check,measured,predicted,tolerance,std_error,samples,rule,pass
std::string reports_csv(const std::vector<CheckReport>& reports);
/// Parses reports_csv output.
std::vector<CheckReport> parse_reports_csv(std::string_view text);

/// Options shared by Monte Carlo checks.
struct MonteCarlo {
  std::size_t samples = 10000;
  Seed seed{7};
  std::size_t workers = 1;
};

// ----------------------------------------------------------------- moments

/// E||g_hat||^2 / E||grad L(theta; B)||^2 against (d+n-1)/n for sphere z or
/// (d+n+1)/n for Gaussian z, tolerance 5% of the prediction. batch_size 0
/// uses the full dataset.
CheckReport check_norm_ratio(const Objective& obj, const ParamStore& theta, std::size_t n, ZDist dist,
                             const MonteCarlo& mc, std::size_t batch_size = 0);

/// Entrywise E[g_hat g_hat^T] for n = 1, Gaussian z and a full batch against
/// 2 g g^T + ||g||^2 I, each entry within 5% of its prediction.
std::vector<CheckReport> check_gaussian_covariance(const Objective& obj, const ParamStore& theta,
                                                   const MonteCarlo& mc);

/// Per-coordinate Monte Carlo mean of the estimate against the oracle
/// gradient, tolerance 3 standard errors. With `expect_bias` the rule flips
/// to `differs` so a detected bias passes.
std::vector<CheckReport> check_unbiasedness(const Objective& obj, const ParamStore& theta, EstimatorKind kind,
                                            std::size_t n, std::span<const double> group_scale,
                                            const MonteCarlo& mc, bool expect_bias = false);

/// Slope of log(mean SPSA estimate) against log(eps) for the cubic probe,
/// Gaussian z, at eps in {1e-2, 1e-1}; predicted 2.
CheckReport check_cubic_bias_slope(const MonteCarlo& mc);

/// Largest deviation from the entry parameters after randomized estimator
/// calls (every kind, both distributions); bound 1e-12.
CheckReport check_reset_identity(std::size_t cases, Seed seed);

// ----------------------------------------------------------------- descent

struct TheoryParams {
  double ell = 0.0;
  double r = 0.0;
  double mu = 0.0;
  double alpha = 0.0;
  double gamma = 0.0;
  double g_max = 0.0;
};

/// Constants of a quadratic at theta: l, r and mu from the spectrum,
/// alpha = N tr(H), gamma for the given n and z distribution over the
/// trainable coordinates, and the largest per-example gradient norm.
TheoryParams quadratic_theory(const QuadraticObjective& obj, const ParamStore& theta, std::size_t n, ZDist dist);

/// (d r + d - 2) / (n (d + 2)) + 1
double sphere_gamma(std::size_t d, double r, std::size_t n);
/// (r + n + 1) / n
double gaussian_gamma(double r, std::size_t n);

/// One-step Monte Carlo of E[L(theta+)] - L(theta) for ZO-SGD against
/// -eta ||g||^2 + 1/2 eta^2 l gamma E||grad L_B||^2 (plus the Gaussian
/// tail term for Gaussian z), one-sided with 3 SE slack. The second report
/// is the first-order descent lemma with oracle minibatch gradients.
std::vector<CheckReport> check_descent_bound(const QuadraticObjective& obj, const ParamStore& theta, double eta,
                                             std::size_t n, std::size_t batch_size, ZDist dist,
                                             const MonteCarlo& mc, const std::string& label);

// ------------------------------------------------------------ rank scaling

struct RankRun {
  std::size_t r = 0;
  std::size_t d = 0;
  std::size_t rep = 0;
  double eta = 0.0;
  std::uint64_t iterations = 0;
  double predicted = 0.0;
};

/// Noise-free quadratics with r unit eigenvalues, sphere z, n = 1 and
/// eta = 1/gamma: iterations until L <= target_ratio * L0. The prediction
/// is the closed form log(target_ratio) / log(1 - 1/gamma).
std::vector<RankRun> rank_scaling_runs(std::span<const std::size_t> ranks, std::span<const std::size_t> dims,
                                       double target_ratio, std::size_t reps, Seed seed,
                                       std::uint64_t max_iterations = 1000000);

/// Mean iterations over the reps of (r, d).
double mean_iterations(const std::vector<RankRun>& runs, std::size_t r, std::size_t d);

/// Ordinary least squares y = a + b x.
struct LinearFit {
  double intercept = 0.0;
  double slope = 0.0;
  double r_squared = 0.0;
};
LinearFit fit_line(std::span<const double> x, std::span<const double> y);

/// Mean one-step loss ratio on a rank-1 quadratic of dimension d with
/// eta = c n / ((d + n - 1) l), against 1 - 2 eta l + eta^2 l^2 gamma,
/// tolerance 5%.
CheckReport check_single_mode_contraction(std::size_t d, double c, const MonteCarlo& mc);

/// Final loss ratio (log10) of ZO-SGD on the identity-Hessian quadratic,
/// d = 100, sphere z, at `factor` times the permissible rate 2n/(d+n-1)/l.
/// A run stopped by divergence measures +6.
double guardrail_log_ratio(double factor, std::uint64_t steps, Seed seed);

// ------------------------------------------------------------- covariance

/// tr Sigma(theta) <= alpha (L(theta) - L*) with alpha = N tr(Hessian) and
/// L* = 0, at every sampled theta. Reports the largest observed
/// tr Sigma / (alpha (L - L*)) against 1.
CheckReport check_sigma_trace_bound(const LogisticObjective& obj, std::span<const ParamStore> points,
                                    const std::string& label);

// ------------------------------------------------------------ sgd baseline

/// Loss trace of oracle-gradient minibatch SGD driven by the same batch
/// seeds as ZO training.
std::vector<double> sgd_baseline(const Objective& obj, const ParamStore& theta0, double eta, std::uint64_t steps,
                                 std::size_t batch_size, Seed master);

/// Expected one-step decrease of ZO-SGD at eta_SGD n / (d + n - 1) divided
/// by that of SGD at eta_SGD = 1/l, on the identity-Hessian quadratic;
/// predicted 1/gamma, tolerance 20%.
CheckReport check_zo_sgd_ratio(std::size_t d, std::size_t n, const MonteCarlo& mc);

// ------------------------------------------------------------------ suites

struct SuiteOptions {
  Seed seed{7};
  std::size_t workers = 1;
};

struct SuiteOutput {
  std::vector<CheckReport> reports;
  /// Extra evidence files, name -> CSV text.
  std::map<std::string, std::string> files;
};

std::vector<std::string> suite_names();
/// Throws InvalidArgument for an unknown suite name.
SuiteOutput run_suite(std::string_view name, const SuiteOptions& options);

}  // namespace zoforge
