#include "zoforge/theorylab.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "zoforge/errors.hpp"
#include "zoforge/optimizer.hpp"
#include "zoforge/train.hpp"

namespace zoforge {

// ------------------------------------------------------------------ reports

std::string_view to_string(CheckRule rule) noexcept {
  switch (rule) {
    case CheckRule::within:
      return "within";
    case CheckRule::at_most:
      return "at_most";
    case CheckRule::at_least:
      return "at_least";
    case CheckRule::differs:
      return "differs";
  }
  return "within";
}

CheckRule parse_check_rule(std::string_view text) {
  if (text == "within") return CheckRule::within;
  if (text == "at_most") return CheckRule::at_most;
  if (text == "at_least") return CheckRule::at_least;
  if (text == "differs") return CheckRule::differs;
  throw InvalidArgument("unknown check rule '" + std::string(text) + "'");
}

CheckReport CheckReport::make(std::string suite, std::string check, double measured, double predicted,
                              double tolerance, double std_error, std::size_t samples, CheckRule rule) {
  CheckReport r;
  r.suite = std::move(suite);
  r.check = std::move(check);
  r.measured = measured;
  r.predicted = predicted;
  r.tolerance = tolerance;
  r.std_error = std_error;
  r.samples = samples;
  r.rule = rule;
  r.pass = r.evaluate();
  return r;
}

bool CheckReport::evaluate() const noexcept {
  switch (rule) {
    case CheckRule::within:
      return std::abs(measured - predicted) <= tolerance;
    case CheckRule::at_most:
      return measured <= predicted + tolerance;
    case CheckRule::at_least:
      return measured >= predicted - tolerance;
    case CheckRule::differs:
      return std::abs(measured - predicted) > tolerance;
  }
  return false;
}

std::string summary_line(const CheckReport& report) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "SUITE %s/%s %s measured=%.9g predicted=%.9g tol=%.9g", report.suite.c_str(),
                report.check.c_str(), report.pass ? "PASS" : "FAIL", report.measured, report.predicted,
                report.tolerance);
  return buf;
}

std::string reports_csv(const std::vector<CheckReport>& reports) {
  std::string out = "suite,check,measured,predicted,tolerance,std_error,samples,rule,pass\n";
  char buf[512];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%.17g,%.17g,%zu,%s,%d\n", r.suite.c_str(), r.check.c_str(),
                  r.measured, r.predicted, r.tolerance, r.std_error, r.samples, std::string(to_string(r.rule)).c_str(),
                  r.pass ? 1 : 0);
    out += buf;
  }
  return out;
}

std::vector<CheckReport> parse_reports_csv(std::string_view text) {
  std::vector<CheckReport> out;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() != 9) throw InvalidArgument("report row needs 9 fields: " + line);
    CheckReport r;
    r.suite = fields[0];
    r.check = fields[1];
    r.measured = std::strtod(fields[2].c_str(), nullptr);
    r.predicted = std::strtod(fields[3].c_str(), nullptr);
    r.tolerance = std::strtod(fields[4].c_str(), nullptr);
    r.std_error = std::strtod(fields[5].c_str(), nullptr);
    r.samples = static_cast<std::size_t>(std::strtoull(fields[6].c_str(), nullptr, 10));
    r.rule = parse_check_rule(fields[7]);
    r.pass = fields[8] == "1";
    out.push_back(std::move(r));
  }
  return out;
}

// ------------------------------------------------------------ MC machinery

namespace {

constexpr double kProbeEpsilon = 1e-3;
constexpr std::size_t kBlock = 256;

/// Sums f(i, scratch, acc) over i in [0, count). Samples are grouped in
/// fixed blocks whose partial sums are combined in block order, so the
/// result is identical for every worker count. `scratch` is reset to
/// `proto` before each call.
template <class F>
std::vector<double> block_sums(std::size_t count, std::size_t width, std::size_t workers, const ParamStore& proto,
                               F&& f) {
  const std::size_t blocks = (count + kBlock - 1) / kBlock;
  std::vector<std::vector<double>> partial(blocks, std::vector<double>(width, 0.0));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;

  const auto run = [&] {
    ParamStore scratch = proto;
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= blocks) return;
      try {
        const std::size_t end = std::min(count, (b + 1) * kBlock);
        for (std::size_t i = b * kBlock; i < end; ++i) {
          std::copy(proto.values().begin(), proto.values().end(), scratch.values().begin());
          f(i, scratch, std::span<double>(partial[b]));
        }
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(blocks);
        return;
      }
    }
  };

  const std::size_t threads = std::min(std::max<std::size_t>(workers, 1), std::max<std::size_t>(blocks, 1));
  if (threads <= 1) {
    run();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(run);
  }
  if (error) std::rethrow_exception(error);

  std::vector<double> total(width, 0.0);
  for (const auto& p : partial) {
    for (std::size_t k = 0; k < width; ++k) total[k] += p[k];
  }
  return total;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(double sum, double sum_sq, std::size_t count) {
  const double m = static_cast<double>(count);
  const double mean = sum / m;
  const double var = count > 1 ? std::max(0.0, (sum_sq - m * mean * mean) / (m - 1.0)) : 0.0;
  return {mean, std::sqrt(var / m)};
}

std::vector<double> masked_gradient(const Objective& obj, const ParamStore& theta, std::span<const std::size_t> batch,
                                    const GroupMask& mask) {
  auto g = obj.gradient(theta, batch);
  const auto& groups = theta.groups();
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    if (mask[gi]) continue;
    std::fill_n(g.begin() + static_cast<std::ptrdiff_t>(groups[gi].offset), groups[gi].length, 0.0);
  }
  return g;
}

double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

/// Plain n-SPSA estimate (1/n) sum_j pg_j z_j as a dense vector.
std::vector<double> n_spsa_estimate(ParamStore& theta, const Objective& obj, std::span<const std::size_t> batch,
                                    std::size_t n, ZDist dist, Seed master, std::uint64_t step,
                                    const GroupMask& mask) {
  const auto result = n_spsa(theta, obj, batch, n, kProbeEpsilon, dist, master, step, mask);
  std::vector<double> g(theta.size(), 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const auto z = materialize_noise(theta, {result.record.seeds[j], dist}, mask);
    const double c = result.record.projected_grads[j] / static_cast<double>(n);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += c * z[k];
  }
  return g;
}

std::vector<std::size_t> batch_for(const Objective& obj, Seed seed, std::uint64_t index, std::size_t batch_size) {
  const std::size_t n = obj.dataset_size();
  if (batch_size == 0 || batch_size == n) return full_batch(obj);
  return sample_minibatch(derive_step_seed(seed, index, kBatchLane), n, batch_size);
}

std::string dist_tag(ZDist dist) { return dist == ZDist::sphere ? "sphere" : "gaussian"; }

}  // namespace

// ----------------------------------------------------------------- moments

CheckReport check_norm_ratio(const Objective& obj, const ParamStore& theta, std::size_t n, ZDist dist,
                             const MonteCarlo& mc, std::size_t batch_size) {
  const GroupMask mask = theta.trainable_mask();
  const std::size_t d = theta.masked_count(mask);
  // Accumulates a = ||g_hat||^2 and b = ||grad L_B||^2 with their second moments.
  const auto sums = block_sums(mc.samples, 5, mc.workers, theta, [&](std::size_t i, ParamStore& th, auto acc) {
    const auto batch = batch_for(obj, mc.seed, i, batch_size);
    const double b = squared_norm(masked_gradient(obj, th, batch, mask));
    const double a = squared_norm(n_spsa_estimate(th, obj, batch, n, dist, mc.seed, i, mask));
    acc[0] += a;
    acc[1] += b;
    acc[2] += a * a;
    acc[3] += b * b;
    acc[4] += a * b;
  });
  const double m = static_cast<double>(mc.samples);
  const double ma = sums[0] / m;
  const double mb = sums[1] / m;
  const double ratio = ma / mb;
  const double va = sums[2] / m - ma * ma;
  const double vb = sums[3] / m - mb * mb;
  const double cab = sums[4] / m - ma * mb;
  const double var_ratio = std::max(0.0, va - 2.0 * ratio * cab + ratio * ratio * vb) / (mb * mb * m);
  const double dn = static_cast<double>(d);
  const double nn = static_cast<double>(n);
  const double predicted = dist == ZDist::sphere ? (dn + nn - 1.0) / nn : (dn + nn + 1.0) / nn;
  std::string name = dist_tag(dist) + "_d" + std::to_string(d) + "_n" + std::to_string(n);
  if (batch_size != 0 && batch_size != obj.dataset_size()) name += "_b" + std::to_string(batch_size);
  return CheckReport::make("normratio", name, ratio, predicted, 0.05 * predicted, std::sqrt(var_ratio), mc.samples,
                           CheckRule::within);
}

std::vector<CheckReport> check_gaussian_covariance(const Objective& obj, const ParamStore& theta,
                                                   const MonteCarlo& mc) {
  const GroupMask mask = theta.trainable_mask();
  const auto batch = full_batch(obj);
  const auto g = masked_gradient(obj, theta, batch, mask);
  const std::size_t d = theta.size();
  const std::size_t pairs = d * (d + 1) / 2;
  const auto sums = block_sums(mc.samples, 2 * pairs, mc.workers, theta, [&](std::size_t i, ParamStore& th, auto acc) {
    const auto gh = n_spsa_estimate(th, obj, batch, 1, ZDist::gaussian, mc.seed, i, mask);
    std::size_t p = 0;
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = r; c < d; ++c, ++p) {
        const double x = gh[r] * gh[c];
        acc[p] += x;
        acc[pairs + p] += x * x;
      }
    }
  });
  const double gsq = squared_norm(g);
  std::vector<CheckReport> out;
  std::size_t p = 0;
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = r; c < d; ++c, ++p) {
      const auto est = mean_se(sums[p], sums[pairs + p], mc.samples);
      const double predicted = 2.0 * g[r] * g[c] + (r == c ? gsq : 0.0);
      out.push_back(CheckReport::make("gaussian_cov", "entry_" + std::to_string(r) + "_" + std::to_string(c), est.mean,
                                      predicted, 0.05 * std::abs(predicted), est.se, mc.samples, CheckRule::within));
    }
  }
  return out;
}

std::vector<CheckReport> check_unbiasedness(const Objective& obj, const ParamStore& theta, EstimatorKind kind,
                                            std::size_t n, std::span<const double> group_scale,
                                            const MonteCarlo& mc, bool expect_bias) {
  if (kind == EstimatorKind::one_point) {
    throw InvalidArgument("the one-point estimator has no per-step unbiasedness property to check");
  }
  const bool modified = kind != EstimatorKind::spsa;
  if (modified && group_scale.size() != theta.groups().size()) {
    throw InvalidArgument("modified estimators need one scale per group");
  }
  const GroupMask mask = theta.trainable_mask();
  const auto batch = full_batch(obj);
  const auto g = masked_gradient(obj, theta, batch, mask);
  const std::size_t d = theta.size();
  const auto& groups = theta.groups();

  const auto sums = block_sums(mc.samples, 2 * d, mc.workers, theta, [&](std::size_t i, ParamStore& th, auto acc) {
    std::vector<double> gh;
    if (!modified) {
      gh = n_spsa_estimate(th, obj, batch, n, ZDist::gaussian, mc.seed, i, mask);
    } else {
      gh.assign(d, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const NoiseSpec noise{probe_seed(mc.seed, i, j), ZDist::gaussian};
        const double pg = kind == EstimatorKind::variance_modified
                              ? variance_modified_spsa(th, obj, batch, kProbeEpsilon, noise, group_scale, mask)
                              : expectation_modified_spsa(th, obj, batch, kProbeEpsilon, noise, group_scale, mask);
        const auto z = materialize_noise(th, noise, mask);
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
          const double s = kind == EstimatorKind::variance_modified ? group_scale[gi] : 1.0;
          for (std::size_t k = groups[gi].offset; k < groups[gi].offset + groups[gi].length; ++k) {
            gh[k] += pg * s * z[k] / static_cast<double>(n);
          }
        }
      }
    }
    for (std::size_t k = 0; k < d; ++k) {
      acc[k] += gh[k];
      acc[d + k] += gh[k] * gh[k];
    }
  });

  std::vector<CheckReport> out;
  const std::string suite = "unbiasedness";
  const std::string prefix = std::string(to_string(kind)) + "_n" + std::to_string(n) + "_coord";
  for (std::size_t k = 0; k < d; ++k) {
    const auto est = mean_se(sums[k], sums[d + k], mc.samples);
    out.push_back(CheckReport::make(suite, prefix + std::to_string(k), est.mean, g[k], 3.0 * est.se, est.se,
                                    mc.samples, expect_bias ? CheckRule::differs : CheckRule::within));
  }
  return out;
}

CheckReport check_cubic_bias_slope(const MonteCarlo& mc) {
  const CubicObjective cubic(1);
  const ParamStore theta = cubic.blueprint();
  const GroupMask mask = theta.trainable_mask();
  const auto batch = full_batch(cubic);
  const double eps[2] = {1e-2, 1e-1};
  MeanSe est[2];
  for (int e = 0; e < 2; ++e) {
    const Seed seed = derive_step_seed(mc.seed, static_cast<std::uint64_t>(e), 0xC0B1C);
    const auto sums = block_sums(mc.samples, 2, mc.workers, theta, [&](std::size_t i, ParamStore& th, auto acc) {
      const auto result = n_spsa(th, cubic, batch, 1, eps[e], ZDist::gaussian, seed, i, mask);
      const auto z = materialize_noise(th, {result.record.seeds[0], ZDist::gaussian}, mask);
      const double gh = result.record.projected_grads[0] * z[0];
      acc[0] += gh;
      acc[1] += gh * gh;
    });
    est[e] = mean_se(sums[0], sums[1], mc.samples);
  }
  const double span = std::log(eps[1] / eps[0]);
  const double slope = std::log(est[1].mean / est[0].mean) / span;
  const double rel0 = est[0].se / est[0].mean;
  const double rel1 = est[1].se / est[1].mean;
  const double se = std::sqrt(rel0 * rel0 + rel1 * rel1) / span;
  return CheckReport::make("cubic", "bias_slope", slope, 2.0, 0.05, se, 2 * mc.samples, CheckRule::within);
}

namespace {

/// Multi-group smooth test function used to exercise the estimators on
/// layouts with several groups.
class ResetProbeObjective final : public Objective {
 public:
  explicit ResetProbeObjective(std::vector<GroupDesc> groups) : groups_(std::move(groups)) {}

  std::string name() const override { return "reset_probe"; }
  std::size_t dataset_size() const override { return 1; }
  ParamStore blueprint() const override { return ParamStore(groups_); }
  double eval(const ParamStore& theta, std::span<const std::size_t>) const override {
    double s = 0.0;
    for (double v : theta.values()) s += 0.5 * v * v + std::sin(v);
    return s;
  }

 private:
  std::vector<GroupDesc> groups_;
};

}  // namespace

CheckReport check_reset_identity(std::size_t cases, Seed seed) {
  Xoshiro256pp rng(seed);
  double worst = 0.0;
  const std::vector<std::size_t> batch{0};
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t group_count = 1 + static_cast<std::size_t>(rng.bounded(3));
    std::vector<GroupDesc> groups;
    std::size_t offset = 0;
    for (std::size_t g = 0; g < group_count; ++g) {
      const std::size_t len = 1 + static_cast<std::size_t>(rng.bounded(8));
      groups.push_back({"g" + std::to_string(g), offset, len, true, 0, 0});
      offset += len;
    }
    const ResetProbeObjective obj(groups);
    const double scale = std::pow(10.0, -2.0 + 3.0 * rng.uniform_open0());
    ParamStore theta = init_params(obj, Seed{rng()}, scale);
    GroupMask mask(group_count, true);
    if (group_count > 1) mask[static_cast<std::size_t>(rng.bounded(group_count))] = rng.bounded(2) == 0;
    const double eps = std::pow(10.0, -6.0 + 6.0 * rng.uniform_open0());
    const ZDist dist = rng.bounded(2) == 0 ? ZDist::gaussian : ZDist::sphere;
    const Seed s{rng()};
    std::vector<double> group_scale(group_count);
    for (double& v : group_scale) v = 0.1 + 2.0 * rng.uniform_open0();

    const std::vector<double> before(theta.values().begin(), theta.values().end());
    switch (rng.bounded(5)) {
      case 0:
        spsa_probe(theta, obj, batch, eps, {s, dist}, mask);
        break;
      case 1: {
        const std::size_t n = 1 + static_cast<std::size_t>(rng.bounded(4));
        n_spsa(theta, obj, batch, n, eps, dist, s, c, mask, {}, 1 + static_cast<std::size_t>(rng.bounded(3)));
        break;
      }
      case 2: {
        OnePointEstimator est;
        est.step(theta, obj, batch, eps, {s, dist}, mask);
        est.step(theta, obj, batch, eps, {Seed{s.value + 1}, dist}, mask);
        break;
      }
      case 3:
        variance_modified_spsa(theta, obj, batch, eps, {s, dist}, group_scale, mask);
        break;
      default:
        expectation_modified_spsa(theta, obj, batch, eps, {s, dist}, group_scale, mask);
        break;
    }
    for (std::size_t k = 0; k < before.size(); ++k) worst = std::max(worst, std::abs(theta.values()[k] - before[k]));
  }
  return CheckReport::make("reset", "max_deviation", worst, 0.0, 1e-12, 0.0, cases, CheckRule::at_most);
}

// ----------------------------------------------------------------- descent

double sphere_gamma(std::size_t d, double r, std::size_t n) {
  const double dd = static_cast<double>(d);
  return (dd * r + dd - 2.0) / (static_cast<double>(n) * (dd + 2.0)) + 1.0;
}

double gaussian_gamma(double r, std::size_t n) {
  const double nn = static_cast<double>(n);
  return (r + nn + 1.0) / nn;
}

TheoryParams quadratic_theory(const QuadraticObjective& obj, const ParamStore& theta, std::size_t n, ZDist dist) {
  TheoryParams p;
  p.ell = obj.ell();
  p.r = obj.effective_rank();
  p.mu = obj.mu_pl();
  double trace = 0.0;
  for (double l : obj.eigenvalues()) trace += l;
  p.alpha = static_cast<double>(obj.dataset_size()) * trace;
  const std::size_t d = theta.trainable_count();
  p.gamma = dist == ZDist::sphere ? sphere_gamma(d, p.r, n) : gaussian_gamma(p.r, n);
  p.g_max = max_example_grad_norm(obj, theta);
  return p;
}

std::vector<CheckReport> check_descent_bound(const QuadraticObjective& obj, const ParamStore& theta, double eta,
                                             std::size_t n, std::size_t batch_size, ZDist dist,
                                             const MonteCarlo& mc, const std::string& label) {
  const GroupMask mask = theta.trainable_mask();
  const std::size_t d = theta.masked_count(mask);
  const std::size_t big_n = obj.dataset_size();
  const std::size_t b = batch_size == 0 ? big_n : batch_size;
  const TheoryParams tp = quadratic_theory(obj, theta, n, dist);
  const auto full = full_batch(obj);
  const double loss0 = obj.eval(theta, full);
  const double gsq = squared_norm(masked_gradient(obj, theta, full, mask));
  const double batch_gsq = gsq + estimate_sigma_trace(obj, theta, b) / static_cast<double>(b);

  // Accumulates the ZO loss change, the SGD loss change and their squares.
  const auto sums = block_sums(mc.samples, 4, mc.workers, theta, [&](std::size_t i, ParamStore& th, auto acc) {
    const auto batch = batch_for(obj, mc.seed, i, b);
    const auto gb = masked_gradient(obj, th, batch, mask);
    // Probing leaves rounding residue, so it runs on a copy and both updates start from theta exactly.
    ParamStore probe = th;
    const auto result = n_spsa(probe, obj, batch, n, kProbeEpsilon, dist, mc.seed, i, mask);
    ParamStore sgd = th;
    for (std::size_t j = 0; j < n; ++j) {
      add_scaled_noise(th, {result.record.seeds[j], dist}, -eta * result.record.projected_grads[j] / static_cast<double>(n),
                       mask);
    }
    const double zo = obj.eval(th, full) - loss0;
    for (std::size_t k = 0; k < gb.size(); ++k) sgd.values()[k] -= eta * gb[k];
    const double sg = obj.eval(sgd, full) - loss0;
    acc[0] += zo;
    acc[1] += zo * zo;
    acc[2] += sg;
    acc[3] += sg * sg;
  });

  double tail = 0.0;
  if (dist == ZDist::gaussian) {
    tail = eta * eta * tp.ell * std::pow(105.0, 0.25) * (static_cast<double>(d) + 6.0) * tp.g_max * tp.g_max *
           std::exp(-static_cast<double>(n * d) / 32.0);
  }
  const double zo_rhs = -eta * gsq + 0.5 * eta * eta * tp.ell * tp.gamma * batch_gsq + tail;
  const double sgd_rhs = -eta * gsq + 0.5 * eta * eta * tp.ell * batch_gsq;
  const auto zo = mean_se(sums[0], sums[1], mc.samples);
  const auto sg = mean_se(sums[2], sums[3], mc.samples);
  return {
      CheckReport::make("descent", label + "_zo", zo.mean, zo_rhs, 3.0 * zo.se, zo.se, mc.samples, CheckRule::at_most),
      CheckReport::make("descent", label + "_sgd", sg.mean, sgd_rhs, 3.0 * sg.se, sg.se, mc.samples,
                        CheckRule::at_most),
  };
}

// ------------------------------------------------------------ rank scaling

namespace {

/// ZO-SGD with sphere z and n = 1 on a noise-free quadratic until the
/// full loss falls to target * L0; returns the iteration count, or
/// max_iterations when the target is not reached.
std::uint64_t iterations_to_target(const QuadraticObjective& obj, const ParamStore& theta0, double eta,
                                   double target_ratio, Seed master, std::uint64_t max_iterations) {
  RunConfig run;
  run.master = master;
  run.steps = max_iterations;
  run.estimator.z_dist = ZDist::sphere;
  run.estimator.epsilon = kProbeEpsilon;
  OptimizerConfig opt;
  opt.lr.eta0 = eta;
  MezoState state(run, opt, obj, theta0);
  const double goal = target_ratio * state.initial_loss();
  ParamStore theta = theta0;
  const auto full = full_batch(obj);
  for (std::uint64_t t = 0; t < max_iterations; ++t) {
    mezo_step(theta, obj, state, run);
    if (obj.eval(theta, full) <= goal) return t + 1;
  }
  return max_iterations;
}

}  // namespace

std::vector<RankRun> rank_scaling_runs(std::span<const std::size_t> ranks, std::span<const std::size_t> dims,
                                       double target_ratio, std::size_t reps, Seed seed,
                                       std::uint64_t max_iterations) {
  std::vector<RankRun> runs;
  for (std::size_t d : dims) {
    for (std::size_t r : ranks) {
      if (r > d) continue;
      const QuadraticObjective obj(low_rank_quadratic(d, r));
      const double gamma = sphere_gamma(d, static_cast<double>(r), 1);
      const double eta = 1.0 / gamma;
      for (std::size_t rep = 0; rep < reps; ++rep) {
        const std::uint64_t key = (static_cast<std::uint64_t>(r) << 40) ^ (static_cast<std::uint64_t>(d) << 16) ^ rep;
        const Seed run_seed = derive_step_seed(seed, key, 0x2A4B);
        const ParamStore theta0 = init_params(obj, derive_step_seed(run_seed, 0, 0x1417), 1.0);
        RankRun rr;
        rr.r = r;
        rr.d = d;
        rr.rep = rep;
        rr.eta = eta;
        rr.iterations = iterations_to_target(obj, theta0, eta, target_ratio, run_seed, max_iterations);
        rr.predicted = std::log(target_ratio) / std::log(1.0 - 1.0 / gamma);
        runs.push_back(rr);
      }
    }
  }
  return runs;
}

double mean_iterations(const std::vector<RankRun>& runs, std::size_t r, std::size_t d) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& run : runs) {
    if (run.r == r && run.d == d) {
      sum += static_cast<double>(run.iterations);
      ++count;
    }
  }
  if (count == 0) throw InvalidArgument("no runs for r=" + std::to_string(r) + " d=" + std::to_string(d));
  return sum / static_cast<double>(count);
}

LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("line fit needs two or more paired points");
  const double m = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / m;
  const double my = sy / m;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw InvalidArgument("line fit needs distinct x values");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return fit;
}

CheckReport check_single_mode_contraction(std::size_t d, double c, const MonteCarlo& mc) {
  const QuadraticObjective obj(low_rank_quadratic(d, 1));
  ParamStore theta = obj.blueprint();
  theta.values()[0] = 1.0;
  const GroupMask mask = theta.trainable_mask();
  const auto batch = full_batch(obj);
  const double ell = obj.ell();
  const double eta = c / (static_cast<double>(d) * ell);
  const double gamma = sphere_gamma(d, 1.0, 1);
  const double loss0 = obj.eval(theta, batch);
  const auto sums = block_sums(mc.samples, 2, mc.workers, theta, [&](std::size_t i, ParamStore& th, auto acc) {
    const auto result = n_spsa(th, obj, batch, 1, kProbeEpsilon, ZDist::sphere, mc.seed, i, mask);
    add_scaled_noise(th, {result.record.seeds[0], ZDist::sphere}, -eta * result.record.projected_grads[0], mask);
    const double ratio = obj.eval(th, batch) / loss0;
    acc[0] += ratio;
    acc[1] += ratio * ratio;
  });
  const auto est = mean_se(sums[0], sums[1], mc.samples);
  const double predicted = 1.0 - 2.0 * eta * ell + eta * eta * ell * ell * gamma;
  char name[64];
  std::snprintf(name, sizeof name, "single_mode_d%zu_c%g", d, c);
  return CheckReport::make("rankscaling", name, est.mean, predicted, 0.05 * predicted, est.se, mc.samples,
                           CheckRule::within);
}

double guardrail_log_ratio(double factor, std::uint64_t steps, Seed seed) {
  constexpr std::size_t kDim = 100;
  const QuadraticObjective obj(low_rank_quadratic(kDim, kDim));
  const ParamStore theta0 = init_params(obj, derive_step_seed(seed, 0, 0x6A7D), 1.0);
  RunConfig run;
  run.master = seed;
  run.steps = steps;
  run.estimator.z_dist = ZDist::sphere;
  run.estimator.epsilon = kProbeEpsilon;
  OptimizerConfig opt;
  opt.lr.eta0 = factor * 2.0 / (static_cast<double>(kDim) * obj.ell());
  try {
    const auto result = train(run, opt, obj, theta0);
    return std::log10(result.metrics.back().loss / result.metrics.front().loss);
  } catch (const DivergenceError&) {
    return 6.0;
  }
}

// ------------------------------------------------------------- covariance

CheckReport check_sigma_trace_bound(const LogisticObjective& obj, std::span<const ParamStore> points,
                                    const std::string& label) {
  if (obj.loss() != LogisticLoss::exp_margin) {
    throw InvalidArgument("the covariance-trace bound is derived for the exponential margin loss");
  }
  const double big_n = static_cast<double>(obj.dataset_size());
  double worst = 0.0;
  for (const auto& theta : points) {
    const double sigma = estimate_sigma_trace(obj, theta, 1);
    const double alpha = big_n * obj.hessian_spectrum(theta).trace;
    const double gap = full_loss(obj, theta);
    worst = std::max(worst, sigma / (alpha * gap));
  }
  return CheckReport::make("sigmatrace", label, worst, 1.0, 0.0, 0.0, points.size(), CheckRule::at_most);
}

// ------------------------------------------------------------ sgd baseline

std::vector<double> sgd_baseline(const Objective& obj, const ParamStore& theta0, double eta, std::uint64_t steps,
                                 std::size_t batch_size, Seed master) {
  const GroupMask mask = theta0.trainable_mask();
  const std::size_t big_n = obj.dataset_size();
  const std::size_t b = batch_size == 0 ? big_n : batch_size;
  ParamStore theta = theta0;
  std::vector<double> losses;
  losses.reserve(steps + 1);
  losses.push_back(full_loss(obj, theta));
  for (std::uint64_t t = 0; t < steps; ++t) {
    const auto batch = sample_minibatch(derive_step_seed(master, t, kBatchLane), big_n, b);
    const auto g = masked_gradient(obj, theta, batch, mask);
    auto values = theta.values();
    for (std::size_t k = 0; k < g.size(); ++k) values[k] = theta.stored(values[k] - eta * g[k]);
    losses.push_back(full_loss(obj, theta));
  }
  return losses;
}

CheckReport check_zo_sgd_ratio(std::size_t d, std::size_t n, const MonteCarlo& mc) {
  const QuadraticObjective obj(low_rank_quadratic(d, d));
  const ParamStore theta = init_params(obj, derive_step_seed(mc.seed, 0, 0x5D6), 1.0);
  const GroupMask mask = theta.trainable_mask();
  const auto batch = full_batch(obj);
  const double ell = obj.ell();
  const double eta_sgd = 1.0 / ell;
  const double eta_zo = eta_sgd * static_cast<double>(n) / static_cast<double>(d + n - 1);
  const double loss0 = obj.eval(theta, batch);

  ParamStore sgd = theta;
  const auto g = obj.gradient(theta, batch);
  for (std::size_t k = 0; k < g.size(); ++k) sgd.values()[k] -= eta_sgd * g[k];
  const double sgd_decrease = loss0 - obj.eval(sgd, batch);

  const auto sums = block_sums(mc.samples, 2, mc.workers, theta, [&](std::size_t i, ParamStore& th, auto acc) {
    const auto result = n_spsa(th, obj, batch, n, kProbeEpsilon, ZDist::sphere, mc.seed, i, mask);
    for (std::size_t j = 0; j < n; ++j) {
      add_scaled_noise(th, {result.record.seeds[j], ZDist::sphere},
                       -eta_zo * result.record.projected_grads[j] / static_cast<double>(n), mask);
    }
    const double dec = (loss0 - obj.eval(th, batch)) / sgd_decrease;
    acc[0] += dec;
    acc[1] += dec * dec;
  });
  const auto est = mean_se(sums[0], sums[1], mc.samples);
  const double predicted = 1.0 / sphere_gamma(d, static_cast<double>(d), n);
  return CheckReport::make("sgdbaseline", "zo_sgd_ratio_d" + std::to_string(d) + "_n" + std::to_string(n), est.mean,
                           predicted, 0.2 * predicted, est.se, mc.samples, CheckRule::within);
}

}  // namespace zoforge
