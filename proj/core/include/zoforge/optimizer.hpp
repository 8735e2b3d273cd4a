#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "zoforge/estimators.hpp"
#include "zoforge/param_store.hpp"

namespace zoforge {

// ---------------------------------------------------------------- schedules

/// Numeric values are part of the trajectory file format.
enum class LrScheduleKind : std::uint8_t { constant = 0, linear_decay = 1 };
enum class NScheduleKind : std::uint8_t { constant = 0, linear_increase = 1 };

std::string_view to_string(LrScheduleKind kind) noexcept;
LrScheduleKind parse_lr_schedule(std::string_view text);
std::string_view to_string(NScheduleKind kind) noexcept;
NScheduleKind parse_n_schedule(std::string_view text);

struct LrSchedule {
  LrScheduleKind kind = LrScheduleKind::constant;
  double eta0 = 1e-3;
  /// Horizon T; 0 lets the training loop fill in the run length.
  std::uint64_t total_steps = 0;
};

struct NSchedule {
  NScheduleKind kind = NScheduleKind::constant;
  std::size_t n0 = 1;
  /// Value reached at the last step of a linear increase.
  std::size_t n1 = 1;
  std::uint64_t total_steps = 0;
};

/// constant: eta0. linear_decay: eta0 (1 - t / T). Throws unless 0 <= t < T.
double lr_at(const LrSchedule& schedule, std::uint64_t t);
/// constant: n0. linear_increase: n0 + (n1 - n0) t / (T - 1) rounded to the
/// nearest integer, at least 1. Throws unless 0 <= t < T.
std::size_t n_at(const NSchedule& schedule, std::uint64_t t);

// ---------------------------------------------------------------- optimizer

/// Numeric values are part of the trajectory file format.
enum class Algo : std::uint8_t { sgd = 0, momentum = 1, adam = 2 };
enum class HistoryMode : std::uint8_t { dense = 0, reconstruct = 1 };

std::string_view to_string(Algo algo) noexcept;
Algo parse_algo(std::string_view text);
std::string_view to_string(HistoryMode mode) noexcept;
HistoryMode parse_history_mode(std::string_view text);

struct OptimizerConfig {
  Algo algo = Algo::sgd;
  /// Adam beta1, or the momentum coefficient.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  LrSchedule lr;
  double weight_decay = 0.0;
  NSchedule n_schedule;
  /// Scale the learning rate by n_t / n0.
  bool couple_lr_to_n = false;
  HistoryMode history = HistoryMode::dense;
  /// Records kept by reconstruct mode; 0 selects the automatic window.
  std::size_t history_window = 0;

  void validate() const;
  /// Window actually used: history_window, or the smallest K with
  /// max(beta)^K <= 1e-8 over the betas of the chosen algorithm.
  std::size_t resolved_window() const;
  /// Copy with every zero schedule horizon replaced by `steps`.
  OptimizerConfig with_horizon(std::uint64_t steps) const;
  /// Effective learning rate at step t, including n coupling.
  double lr_for_step(std::uint64_t t) const;
};

/// Auxiliary storage held by an Updater, in scalars.
struct AuxAllocationAudit {
  /// Scalars that live across steps (moment vectors or the record window).
  std::size_t persistent_scalars = 0;
  std::size_t peak_persistent_scalars = 0;
  /// Persistent vectors with one entry per parameter.
  std::size_t dense_vectors = 0;
  /// Largest scratch requested during a single update.
  std::size_t peak_transient_scalars = 0;
};

/// The update arithmetic shared by training and replay. Given the same
/// records, masks, scales and learning rates it produces bitwise identical
/// parameters, which is what makes replay exact.
class Updater {
 public:
  Updater(OptimizerConfig config, std::size_t dim, std::size_t group_count);

  /// Applies one step. `record.projected_grads` must already be quantized.
  /// `update_scale` (one entry per group, empty for ones) multiplies pg z.
  /// Weight decay theta <- theta (1 - lr lambda) follows on masked entries.
  void apply(ParamStore& theta, const GradRecord& record, ZDist dist, const GroupMask& mask,
             std::span<const double> update_scale, double lr);

  std::uint64_t steps() const noexcept { return steps_; }
  const OptimizerConfig& config() const noexcept { return config_; }
  const AuxAllocationAudit& audit() const noexcept { return audit_; }

 private:
  struct HistoryEntry {
    GradRecord record;
    GroupMask mask;
    std::vector<double> scale;
    std::uint64_t index = 0;
  };

  void apply_sgd(ParamStore& theta, const GradRecord& record, ZDist dist, const GroupMask& mask,
                 std::span<const double> update_scale, double lr);
  void apply_dense(ParamStore& theta, const GradRecord& record, ZDist dist, const GroupMask& mask,
                   std::span<const double> update_scale, double lr);
  void apply_reconstruct(ParamStore& theta, const GradRecord& record, ZDist dist, const GroupMask& mask,
                         std::span<const double> update_scale, double lr);
  void apply_weight_decay(ParamStore& theta, const GroupMask& mask, double lr) const;
  void note_persistent(std::size_t scalars);

  OptimizerConfig config_;
  std::size_t dim_;
  std::size_t group_count_;
  std::uint64_t steps_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
  std::deque<HistoryEntry> history_;
  std::size_t window_ = 0;
  AuxAllocationAudit audit_;
};

// ------------------------------------------------------------------- stages

/// Trainable groups for a block of steps. An empty list or the single name
/// "all" selects every group the store marks trainable.
struct Stage {
  std::vector<std::string> groups;
  std::uint64_t steps = 0;
};

struct ResolvedStage {
  GroupMask mask;
  std::uint64_t steps = 0;
};

using StagePlan = std::vector<ResolvedStage>;

/// An empty stage list becomes one "all" stage of `total_steps`. Throws on
/// unknown groups, zero-step stages, empty masks or budgets that do not sum
/// to total_steps.
StagePlan resolve_stages(const ParamStore& store, const std::vector<Stage>& stages, std::uint64_t total_steps);

/// Mask in force at step t.
const GroupMask& mask_at(const StagePlan& plan, std::uint64_t t);

/// FNV-1a over the group table followed by every stage mask and budget.
std::uint64_t plan_layout_hash(const ParamStore& store, const StagePlan& plan);

}  // namespace zoforge
