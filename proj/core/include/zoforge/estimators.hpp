#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "zoforge/objective.hpp"
#include "zoforge/param_store.hpp"
#include "zoforge/random.hpp"

namespace zoforge {

/// Numeric values are part of the trajectory file format.
enum class EstimatorKind : std::uint8_t { spsa = 0, one_point = 1, variance_modified = 2, expectation_modified = 3 };

/// Where the per-group scale vector d of the modified estimators comes from.
enum class ScaleSource : std::uint8_t { ones = 0, param_norm = 1, grad_norm = 2, external = 3 };

/// When a grad_norm scale vector is re-estimated.
enum class ScaleRefresh : std::uint8_t { never = 0, per_epoch = 1 };

std::string_view to_string(EstimatorKind kind) noexcept;
EstimatorKind parse_estimator_kind(std::string_view text);
std::string_view to_string(ScaleSource source) noexcept;
ScaleSource parse_scale_source(std::string_view text);
std::string_view to_string(ScaleRefresh refresh) noexcept;
ScaleRefresh parse_scale_refresh(std::string_view text);
std::string_view to_string(ZDist dist) noexcept;
ZDist parse_zdist(std::string_view text);

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::spsa;
  std::size_t n = 1;
  double epsilon = 1e-3;
  ZDist z_dist = ZDist::gaussian;
  ScaleSource scale_source = ScaleSource::ones;
  ScaleRefresh scale_refresh = ScaleRefresh::never;
  /// Probes per group for the grad_norm scale source.
  std::size_t norm_probes = 8;
  /// One positive entry per group for the external scale source.
  std::vector<double> external_scale;
  /// Floor applied to measured norms so that d stays strictly positive.
  double min_scale = 1e-8;

  /// Throws InvalidArgument on n = 0, epsilon <= 0, a one-point estimator
  /// with n != 1, or a scale source on the plain estimators.
  void validate() const;
};

/// Storage precision of projected gradients. Numeric values are part of the
/// trajectory file format.
enum class GradPrecision : std::uint8_t { bf16 = 0, f32 = 1, f64 = 2 };

std::string_view to_string(GradPrecision precision) noexcept;
GradPrecision parse_grad_precision(std::string_view text);
std::size_t grad_width(GradPrecision precision) noexcept;

/// Rounds to the stored precision. bf16 keeps the top 16 bits of the
/// 32-bit float (truncation, not rounding to nearest).
double quantize_grad(double value, GradPrecision precision) noexcept;

/// Everything needed to replay one update: seeds are re-derived from the
/// master seed on decode, projected gradients are the stored scalars.
struct GradRecord {
  std::uint64_t step = 0;
  std::vector<Seed> seeds;
  std::vector<double> projected_grads;
  double epsilon = 0.0;

  friend bool operator==(const GradRecord&, const GradRecord&) = default;
};

/// Seed of probe j at `step`.
inline Seed probe_seed(Seed master, std::uint64_t step, std::size_t probe) {
  return derive_step_seed(master, step, noise_lane(probe));
}

/// Projected gradient plus the two losses it came from.
struct ProbeResult {
  double projected_grad = 0.0;
  double loss_plus = 0.0;
  double loss_minus = 0.0;
};

/// Two-point SPSA along z (scaled blockwise by `inv_scale` when given):
/// perturb +eps, evaluate, perturb -2 eps, evaluate, perturb +eps. Exactly
/// two evaluations. Theta is restored before any error is raised; a
/// non-finite loss raises NonFiniteLoss naming "plus" or "minus".
ProbeResult spsa_probe(ParamStore& theta, const Objective& obj, std::span<const std::size_t> batch, double epsilon,
                       const NoiseSpec& noise, const GroupMask& mask, std::span<const double> inv_scale = {});

/// The parameter arithmetic of one probe with no evaluation: +eps, -2 eps,
/// +eps for the two-point estimators and +eps, -eps for the one-point
/// estimator. Leaves theta with exactly the rounding residue the probe
/// itself leaves, which is what lets replay match training bitwise.
void probe_round_trip(ParamStore& theta, EstimatorKind kind, double epsilon, const NoiseSpec& noise,
                      const GroupMask& mask, std::span<const double> inv_scale = {});

/// (l+ - l-) / (2 eps) over the store's trainable groups.
double spsa_projected_grad(ParamStore& theta, const Objective& obj, std::span<const std::size_t> batch,
                           double epsilon, const NoiseSpec& noise);

struct NSpsaResult {
  GradRecord record;
  /// Mean of the 2n perturbed losses.
  double mean_loss = 0.0;
};

/// n independent probes with seeds probe_seed(master, step, j), run in
/// order on theta. With workers > 1 probe j runs on a clone that first
/// receives the round trips of probes 0..j-1, so the result and the final
/// theta do not depend on the worker count.
NSpsaResult n_spsa(ParamStore& theta, const Objective& obj, std::span<const std::size_t> batch, std::size_t n,
                   double epsilon, ZDist dist, Seed master, std::uint64_t step, const GroupMask& mask,
                   std::span<const double> inv_scale = {}, std::size_t workers = 1);

/// One-point residual-feedback estimator. Each call evaluates the loss once
/// at theta + eps z_t and returns (L_t - L_{t-1}) / eps; the update
/// direction is that scalar times z_t. The first call only primes the cache
/// and returns 0.
class OnePointEstimator {
 public:
  ProbeResult step(ParamStore& theta, const Objective& obj, std::span<const std::size_t> batch, double epsilon,
                   const NoiseSpec& noise, const GroupMask& mask);

  bool primed() const noexcept { return previous_.has_value(); }
  std::optional<double> previous_loss() const noexcept { return previous_; }
  /// Seeds the cache directly, e.g. from a known previous perturbed loss.
  void prime(double loss) noexcept { previous_ = loss; }

 private:
  std::optional<double> previous_;
};

/// Probe along eps (d^{-1} . z). The variance-modified estimate is
/// pg (d . z); the expectation-modified estimate is pg z. Throws
/// InvalidArgument unless every group scale is > 0.
double variance_modified_spsa(ParamStore& theta, const Objective& obj, std::span<const std::size_t> batch,
                              double epsilon, const NoiseSpec& noise, std::span<const double> group_scale,
                              const GroupMask& mask);
double expectation_modified_spsa(ParamStore& theta, const Objective& obj, std::span<const std::size_t> batch,
                                 double epsilon, const NoiseSpec& noise, std::span<const double> group_scale,
                                 const GroupMask& mask);

/// |projected gradient| with z supported on one group only.
double zo_group_grad_norm(ParamStore& theta, const Objective& obj, std::span<const std::size_t> batch,
                          double epsilon, const NoiseSpec& noise, std::string_view group);

/// Lane used by the grad_norm scale probes, clear of every probe lane.
inline constexpr std::uint32_t kScaleLane = 0xFFFF0000u;

/// Per-group scale vector for the configured source, floored at min_scale.
/// param_norm uses ||theta_g||; grad_norm is the root mean square of
/// norm_probes group probes seeded from (master, step). Scales of
/// masked-out groups are 1.
std::vector<double> build_scale_vector(const ParamStore& theta, const Objective* obj, std::span<const std::size_t> batch,
                                       const EstimatorConfig& config, const GroupMask& mask, Seed master,
                                       std::uint64_t step);

/// Elementwise reciprocal; throws InvalidArgument on a non-positive entry.
std::vector<double> reciprocal_scale(std::span<const double> group_scale);

/// Multiplier of pg z in the update for a given estimator: the scale
/// itself for variance_modified, empty (all ones) otherwise.
std::vector<double> update_scale(EstimatorKind kind, std::span<const double> group_scale);

}  // namespace zoforge
