#include "zoforge/errors.hpp"
#include "zoforge/trajectory.hpp"

namespace zoforge {

ParamStore replay(const Trajectory& trajectory, const ParamStore& theta0, const ReplayOptions& options) {
  const auto& h = trajectory.header;
  if (trajectory.records.size() != h.steps) throw InvalidArgument("trajectory record count differs from header");
  if (theta0.precision() != h.storage) throw InvalidArgument("initial parameters use a different storage precision");
  if (h.steps == 0) return theta0;

  const StagePlan plan = resolve_stages(theta0, options.stages, h.steps);
  const std::uint64_t actual = plan_layout_hash(theta0, plan);
  if (actual != h.layout_hash) throw LayoutMismatch(h.layout_hash, actual);

  const bool modified =
      h.estimator == EstimatorKind::variance_modified || h.estimator == EstimatorKind::expectation_modified;
  if (modified && h.scale_source == ScaleSource::grad_norm) {
    throw InvalidArgument("runs scaled by estimated gradient norms need loss evaluations and cannot be replayed");
  }
  EstimatorConfig scale_config;
  scale_config.kind = h.estimator;
  scale_config.scale_source = h.scale_source;
  scale_config.external_scale = options.external_scale;

  ParamStore theta = theta0;
  const OptimizerConfig opt = h.optimizer();
  Updater updater(opt, theta.size(), theta.groups().size());
  std::vector<double> scale;
  std::vector<double> upd_scale;
  std::vector<double> inv_scale;
  for (std::uint64_t t = 0; t < h.steps; ++t) {
    const GroupMask& mask = mask_at(plan, t);
    if (modified && h.scale_source != ScaleSource::ones) {
      if (h.scale_source == ScaleSource::param_norm || scale.empty()) {
        scale = build_scale_vector(theta, nullptr, {}, scale_config, mask, h.master, t);
      }
      upd_scale = update_scale(h.estimator, scale);
      inv_scale = reciprocal_scale(scale);
    }
    const GradRecord& record = trajectory.records[t];
    for (const Seed seed : record.seeds) {
      probe_round_trip(theta, h.estimator, h.epsilon, {seed, h.z_dist}, mask, inv_scale);
    }
    updater.apply(theta, record, h.z_dist, mask, upd_scale, opt.lr_for_step(t));
  }
  return theta;
}

}  // namespace zoforge
