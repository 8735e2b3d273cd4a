#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "zoforge/estimators.hpp"
#include "zoforge/objective.hpp"
#include "zoforge/optimizer.hpp"
#include "zoforge/trajectory.hpp"

namespace zoforge {

struct RunConfig {
  Seed master{0};
  std::uint64_t steps = 1;
  /// Minibatch size; 0 means the full dataset.
  std::size_t batch_size = 0;
  EstimatorConfig estimator;
  /// Metrics row period in steps; 0 writes only the first and last rows.
  std::uint64_t eval_every = 0;
  std::vector<Stage> stages;
  GradPrecision precision = GradPrecision::f64;
  /// Fill elapsed_ns in the metrics. Off by default so metrics files are
  /// reproducible byte for byte.
  bool timing = false;
  /// Threads for the n probes of a step; results do not depend on it.
  std::size_t workers = 1;
  /// Abort once a loss exceeds this multiple of |L0| (when L0 != 0).
  double divergence_factor = 1e6;

  void validate() const;
};

struct MetricsRow {
  std::uint64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::size_t n = 0;
  double grad_norm_est = 0.0;
  std::int64_t elapsed_ns = 0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

/// Header `step,loss,lr,n,grad_norm_est,elapsed_ns`, LF line endings,
/// doubles at 17 significant digits.
std::string metrics_csv(const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);

/// Mutable state of a run between steps.
class MezoState {
 public:
  MezoState(const RunConfig& run, const OptimizerConfig& opt, const Objective& obj, const ParamStore& theta0);

  std::uint64_t step() const noexcept { return t_; }
  const StagePlan& plan() const noexcept { return plan_; }
  const OptimizerConfig& optimizer() const noexcept { return opt_; }
  const Updater& updater() const noexcept { return updater_; }
  /// Full-batch loss at theta0.
  double initial_loss() const noexcept { return initial_loss_; }
  /// Trajectory header describing this run.
  TrajectoryHeader header(const ParamStore& theta0) const;

 private:
  friend GradRecord mezo_step(ParamStore&, const Objective&, MezoState&, const RunConfig&);

  OptimizerConfig opt_;
  StagePlan plan_;
  Updater updater_;
  OnePointEstimator one_point_;
  std::vector<double> scale_;
  std::uint64_t t_ = 0;
  double initial_loss_ = 0.0;
  std::size_t steps_per_epoch_ = 1;
};

/// One iteration: sample the batch (batch lane) and probe seeds (noise
/// lanes), estimate, quantize the projected gradients to the run precision,
/// then update. Raises DivergenceError on a non-finite or exploding loss.
GradRecord mezo_step(ParamStore& theta, const Objective& obj, MezoState& state, const RunConfig& run);

struct TrainResult {
  ParamStore params;
  Trajectory trajectory;
  std::vector<MetricsRow> metrics;
  std::size_t forward_passes = 0;
};

/// Runs every stage in order from theta0.
TrainResult train(const RunConfig& run, const OptimizerConfig& opt, const Objective& obj, const ParamStore& theta0);

}  // namespace zoforge
