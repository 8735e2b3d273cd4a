#include "zoforge/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "zoforge/errors.hpp"

namespace zoforge {

void RunConfig::validate() const {
  if (steps == 0) throw InvalidArgument("run needs at least one step");
  if (steps > 0xFFFFFFFFull) throw InvalidArgument("run length must fit 32 bits");
  if (workers == 0) throw InvalidArgument("workers must be >= 1");
  if (!(divergence_factor > 0.0)) throw InvalidArgument("divergence factor must be > 0");
  estimator.validate();
  std::uint64_t sum = 0;
  for (const auto& stage : stages) {
    if (stage.steps == 0) throw InvalidArgument("stage with zero steps");
    sum += stage.steps;
  }
  if (!stages.empty() && sum != steps) {
    throw InvalidArgument("stage budgets sum to " + std::to_string(sum) + " but the run has " + std::to_string(steps) +
                          " steps");
  }
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "step,loss,lr,n,grad_norm_est,elapsed_ns\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%zu,%.17g,%lld\n", static_cast<unsigned long long>(r.step), r.loss,
                  r.lr, r.n, r.grad_norm_est, static_cast<long long>(r.elapsed_ns));
    out += buf;
  }
  return out;
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << metrics_csv(rows);
}

namespace {

OptimizerConfig prepared(const RunConfig& run, const OptimizerConfig& opt) {
  run.validate();
  OptimizerConfig out = opt.with_horizon(run.steps);
  if (out.lr.total_steps != run.steps || out.n_schedule.total_steps != run.steps) {
    throw InvalidArgument("schedule horizons must equal the run length");
  }
  if (out.n_schedule.n0 != run.estimator.n) {
    throw InvalidArgument("estimator n (" + std::to_string(run.estimator.n) + ") differs from the n schedule start (" +
                          std::to_string(out.n_schedule.n0) + ")");
  }
  if (run.estimator.kind == EstimatorKind::one_point && out.n_schedule.kind != NScheduleKind::constant) {
    throw InvalidArgument("the one-point estimator uses a constant n of 1");
  }
  if (out.history == HistoryMode::reconstruct) {
    if (out.resolved_window() > 0xFFFF) throw InvalidArgument("history window must fit 16 bits");
    out.history_window = out.resolved_window();
  }
  out.validate();
  return out;
}

bool modified(EstimatorKind kind) {
  return kind == EstimatorKind::variance_modified || kind == EstimatorKind::expectation_modified;
}

}  // namespace

MezoState::MezoState(const RunConfig& run, const OptimizerConfig& opt, const Objective& obj, const ParamStore& theta0)
    : opt_(prepared(run, opt)),
      plan_(resolve_stages(theta0, run.stages, run.steps)),
      updater_(opt_, theta0.size(), theta0.groups().size()) {
  if (run.batch_size > obj.dataset_size()) {
    throw InvalidArgument("batch size " + std::to_string(run.batch_size) + " exceeds dataset size " +
                          std::to_string(obj.dataset_size()));
  }
  const std::size_t b = run.batch_size == 0 ? obj.dataset_size() : run.batch_size;
  steps_per_epoch_ = (obj.dataset_size() + b - 1) / b;
  initial_loss_ = full_loss(obj, theta0);
  if (!std::isfinite(initial_loss_)) throw DivergenceError(0, "initial loss is not finite");
}

TrajectoryHeader MezoState::header(const ParamStore& theta0) const {
  TrajectoryHeader h;
  h.algo = opt_.algo;
  h.steps = static_cast<std::uint32_t>(opt_.lr.total_steps);
  h.n = static_cast<std::uint16_t>(opt_.n_schedule.n0);
  h.eta0 = opt_.lr.eta0;
  h.lr_schedule = opt_.lr.kind;
  h.n_schedule = opt_.n_schedule.kind;
  h.n_final = static_cast<std::uint16_t>(opt_.n_schedule.kind == NScheduleKind::constant ? opt_.n_schedule.n0
                                                                                           : opt_.n_schedule.n1);
  h.couple_lr_to_n = opt_.couple_lr_to_n;
  h.history = opt_.algo == Algo::sgd ? HistoryMode::dense : opt_.history;
  h.history_window = static_cast<std::uint16_t>(h.history == HistoryMode::reconstruct ? opt_.history_window : 0);
  h.weight_decay = opt_.weight_decay;
  h.beta1 = opt_.beta1;
  h.beta2 = opt_.beta2;
  h.eps_adam = opt_.eps_adam;
  h.layout_hash = plan_layout_hash(theta0, plan_);
  h.storage = theta0.precision();
  return h;
}

GradRecord mezo_step(ParamStore& theta, const Objective& obj, MezoState& state, const RunConfig& run) {
  const std::uint64_t t = state.t_;
  if (t >= run.steps) throw InvalidArgument("run already finished");
  const GroupMask& mask = mask_at(state.plan_, t);
  const auto& est = run.estimator;

  const std::size_t b = run.batch_size == 0 ? obj.dataset_size() : run.batch_size;
  const auto batch = sample_minibatch(derive_step_seed(run.master, t, kBatchLane), obj.dataset_size(), b);

  std::vector<double> inv_scale;
  std::vector<double> upd_scale;
  if (modified(est.kind) && est.scale_source != ScaleSource::ones) {
    bool refresh = false;
    switch (est.scale_source) {
      case ScaleSource::param_norm:
        refresh = true;
        break;
      case ScaleSource::external:
        refresh = state.scale_.empty();
        break;
      case ScaleSource::grad_norm: {
        const bool stage_start = t == 0 || &mask_at(state.plan_, t - 1) != &mask;
        const bool epoch_start = est.scale_refresh == ScaleRefresh::per_epoch && t % state.steps_per_epoch_ == 0;
        refresh = state.scale_.empty() || stage_start || epoch_start;
        break;
      }
      case ScaleSource::ones:
        break;
    }
    if (refresh) state.scale_ = build_scale_vector(theta, &obj, batch, est, mask, run.master, t);
    inv_scale = reciprocal_scale(state.scale_);
    upd_scale = update_scale(est.kind, state.scale_);
  }

  const std::size_t n = n_at(state.opt_.n_schedule, t);
  GradRecord record;
  double step_loss = 0.0;
  try {
    if (est.kind == EstimatorKind::one_point) {
      const Seed seed = probe_seed(run.master, t, 0);
      const auto probe = state.one_point_.step(theta, obj, batch, est.epsilon, {seed, est.z_dist}, mask);
      record.step = t;
      record.epsilon = est.epsilon;
      record.seeds = {seed};
      record.projected_grads = {probe.projected_grad};
      step_loss = probe.loss_plus;
    } else {
      auto result = n_spsa(theta, obj, batch, n, est.epsilon, est.z_dist, run.master, t, mask, inv_scale, run.workers);
      record = std::move(result.record);
      step_loss = result.mean_loss;
    }
  } catch (const NonFiniteLoss& e) {
    throw DivergenceError(t, e.what());
  }

  for (double& pg : record.projected_grads) {
    if (!std::isfinite(pg)) throw DivergenceError(t, "non-finite projected gradient");
    pg = quantize_grad(pg, run.precision);
  }
  const double l0 = state.initial_loss_;
  if (l0 != 0.0 && step_loss > run.divergence_factor * std::abs(l0)) {
    throw DivergenceError(t, "loss " + std::to_string(step_loss) + " exceeds " + std::to_string(run.divergence_factor) +
                                 " x |L0|");
  }

  state.updater_.apply(theta, record, est.z_dist, mask, upd_scale, state.opt_.lr_for_step(t));
  ++state.t_;
  return record;
}

TrainResult train(const RunConfig& run, const OptimizerConfig& opt, const Objective& obj, const ParamStore& theta0) {
  CountingObjective counted(obj);
  TrainResult result;
  result.params = theta0;
  MezoState state(run, opt, counted, theta0);
  result.trajectory.header = state.header(theta0);
  auto& h = result.trajectory.header;
  h.precision = run.precision;
  h.z_dist = run.estimator.z_dist;
  h.master = run.master;
  h.epsilon = run.estimator.epsilon;
  h.scale_source = run.estimator.scale_source;
  h.estimator = run.estimator.kind;
  result.trajectory.records.reserve(run.steps);

  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&]() -> std::int64_t {
    if (!run.timing) return 0;
    return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start).count();
  };
  const auto& sched = state.optimizer();
  result.metrics.push_back({0, state.initial_loss(), sched.lr_for_step(0), n_at(sched.n_schedule, 0), 0.0, elapsed()});

  for (std::uint64_t t = 0; t < run.steps; ++t) {
    const double lr = sched.lr_for_step(t);
    GradRecord record = mezo_step(result.params, counted, state, run);
    const std::uint64_t done = t + 1;
    const bool due = (run.eval_every != 0 && done % run.eval_every == 0) || done == run.steps;
    if (due) {
      const double loss = full_loss(counted, result.params);
      if (!std::isfinite(loss)) throw DivergenceError(t, "full-batch loss is not finite");
      const double l0 = state.initial_loss();
      if (l0 != 0.0 && loss > run.divergence_factor * std::abs(l0)) {
        throw DivergenceError(t, "loss " + std::to_string(loss) + " exceeds " + std::to_string(run.divergence_factor) +
                                     " x |L0|");
      }
      double sq = 0.0;
      for (double pg : record.projected_grads) sq += pg * pg;
      const double gnorm = std::sqrt(sq / static_cast<double>(record.projected_grads.size()));
      result.metrics.push_back({done, loss, lr, record.projected_grads.size(), gnorm, elapsed()});
    }
    result.trajectory.records.push_back(std::move(record));
  }
  result.forward_passes = counted.evaluations();
  return result;
}

}  // namespace zoforge
