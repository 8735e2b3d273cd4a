#include "zoforge/estimators.hpp"

#include <bit>
#include <cmath>
#include <exception>
#include <thread>

#include "zoforge/errors.hpp"

namespace zoforge {

std::string_view to_string(EstimatorKind kind) noexcept {
  switch (kind) {
    case EstimatorKind::spsa: return "spsa";
    case EstimatorKind::one_point: return "one_point";
    case EstimatorKind::variance_modified: return "variance_modified";
    case EstimatorKind::expectation_modified: return "expectation_modified";
  }
  return "unknown";
}

EstimatorKind parse_estimator_kind(std::string_view text) {
  if (text == "spsa") return EstimatorKind::spsa;
  if (text == "one_point") return EstimatorKind::one_point;
  if (text == "variance_modified") return EstimatorKind::variance_modified;
  if (text == "expectation_modified") return EstimatorKind::expectation_modified;
  throw InvalidArgument("unknown estimator '" + std::string(text) +
                        "' (expected spsa, one_point, variance_modified or expectation_modified)");
}

std::string_view to_string(ScaleSource source) noexcept {
  switch (source) {
    case ScaleSource::ones: return "ones";
    case ScaleSource::param_norm: return "param_norm";
    case ScaleSource::grad_norm: return "grad_norm";
    case ScaleSource::external: return "external";
  }
  return "unknown";
}

ScaleSource parse_scale_source(std::string_view text) {
  if (text == "ones") return ScaleSource::ones;
  if (text == "param_norm") return ScaleSource::param_norm;
  if (text == "grad_norm") return ScaleSource::grad_norm;
  if (text == "external") return ScaleSource::external;
  throw InvalidArgument("unknown scale source '" + std::string(text) +
                        "' (expected ones, param_norm, grad_norm or external)");
}

std::string_view to_string(ScaleRefresh refresh) noexcept {
  return refresh == ScaleRefresh::never ? "never" : "per_epoch";
}

ScaleRefresh parse_scale_refresh(std::string_view text) {
  if (text == "never") return ScaleRefresh::never;
  if (text == "per_epoch") return ScaleRefresh::per_epoch;
  throw InvalidArgument("unknown scale refresh '" + std::string(text) + "' (expected never or per_epoch)");
}

std::string_view to_string(ZDist dist) noexcept { return dist == ZDist::gaussian ? "gaussian" : "sphere"; }

ZDist parse_zdist(std::string_view text) {
  if (text == "gaussian") return ZDist::gaussian;
  if (text == "sphere") return ZDist::sphere;
  throw InvalidArgument("unknown z distribution '" + std::string(text) + "' (expected gaussian or sphere)");
}

void EstimatorConfig::validate() const {
  if (n == 0) throw InvalidArgument("estimator n must be >= 1");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw InvalidArgument("estimator epsilon must be > 0");
  if (kind == EstimatorKind::one_point && n != 1) throw InvalidArgument("the one-point estimator uses n = 1");
  const bool modified = kind == EstimatorKind::variance_modified || kind == EstimatorKind::expectation_modified;
  if (!modified && scale_source != ScaleSource::ones) {
    throw InvalidArgument("scale sources apply to the modified estimators only");
  }
  if (scale_source == ScaleSource::grad_norm && norm_probes == 0) {
    throw InvalidArgument("grad_norm scale needs at least one probe");
  }
  if (!(min_scale > 0.0)) throw InvalidArgument("min_scale must be > 0");
  if (scale_source == ScaleSource::external) {
    if (external_scale.empty()) throw InvalidArgument("external scale source needs external_scale values");
    for (double v : external_scale) {
      if (!(v > 0.0)) throw InvalidArgument("external scale entries must be > 0");
    }
  }
}

std::string_view to_string(GradPrecision precision) noexcept {
  switch (precision) {
    case GradPrecision::bf16: return "bf16";
    case GradPrecision::f32: return "f32";
    case GradPrecision::f64: return "f64";
  }
  return "unknown";
}

GradPrecision parse_grad_precision(std::string_view text) {
  if (text == "bf16") return GradPrecision::bf16;
  if (text == "f32") return GradPrecision::f32;
  if (text == "f64") return GradPrecision::f64;
  throw InvalidArgument("unknown gradient precision '" + std::string(text) + "' (expected bf16, f32 or f64)");
}

std::size_t grad_width(GradPrecision precision) noexcept {
  switch (precision) {
    case GradPrecision::bf16: return 2;
    case GradPrecision::f32: return 4;
    case GradPrecision::f64: return 8;
  }
  return 8;
}

double quantize_grad(double value, GradPrecision precision) noexcept {
  switch (precision) {
    case GradPrecision::f64:
      return value;
    case GradPrecision::f32:
      return static_cast<double>(static_cast<float>(value));
    case GradPrecision::bf16: {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value)) & 0xFFFF0000u;
      return static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  return value;
}

ProbeResult spsa_probe(ParamStore& theta, const Objective& obj, std::span<const std::size_t> batch, double epsilon,
                       const NoiseSpec& noise, const GroupMask& mask, std::span<const double> inv_scale) {
  ProbeResult out;
  add_scaled_noise(theta, noise, epsilon, mask, inv_scale);
  try {
    out.loss_plus = obj.eval(theta, batch);
  } catch (...) {
    add_scaled_noise(theta, noise, -epsilon, mask, inv_scale);
    throw;
  }
  add_scaled_noise(theta, noise, -2.0 * epsilon, mask, inv_scale);
  try {
    out.loss_minus = obj.eval(theta, batch);
  } catch (...) {
    add_scaled_noise(theta, noise, epsilon, mask, inv_scale);
    throw;
  }
  add_scaled_noise(theta, noise, epsilon, mask, inv_scale);
  if (!std::isfinite(out.loss_plus)) throw NonFiniteLoss("plus", out.loss_plus);
  if (!std::isfinite(out.loss_minus)) throw NonFiniteLoss("minus", out.loss_minus);
  out.projected_grad = (out.loss_plus - out.loss_minus) / (2.0 * epsilon);
  return out;
}

void probe_round_trip(ParamStore& theta, EstimatorKind kind, double epsilon, const NoiseSpec& noise,
                      const GroupMask& mask, std::span<const double> inv_scale) {
  if (kind == EstimatorKind::one_point) {
    add_scaled_noise(theta, noise, epsilon, mask);
    add_scaled_noise(theta, noise, -epsilon, mask);
    return;
  }
  add_scaled_noise(theta, noise, epsilon, mask, inv_scale);
  add_scaled_noise(theta, noise, -2.0 * epsilon, mask, inv_scale);
  add_scaled_noise(theta, noise, epsilon, mask, inv_scale);
}

double spsa_projected_grad(ParamStore& theta, const Objective& obj, std::span<const std::size_t> batch,
                           double epsilon, const NoiseSpec& noise) {
  return spsa_probe(theta, obj, batch, epsilon, noise, theta.trainable_mask()).projected_grad;
}

NSpsaResult n_spsa(ParamStore& theta, const Objective& obj, std::span<const std::size_t> batch, std::size_t n,
                   double epsilon, ZDist dist, Seed master, std::uint64_t step, const GroupMask& mask,
                   std::span<const double> inv_scale, std::size_t workers) {
  if (n == 0) throw InvalidArgument("n-SPSA needs n >= 1");
  NSpsaResult out;
  out.record.step = step;
  out.record.epsilon = epsilon;
  out.record.seeds.resize(n);
  for (std::size_t j = 0; j < n; ++j) out.record.seeds[j] = probe_seed(master, step, j);
  std::vector<ProbeResult> probes(n);

  if (workers <= 1 || n == 1) {
    for (std::size_t j = 0; j < n; ++j) {
      probes[j] = spsa_probe(theta, obj, batch, epsilon, {out.record.seeds[j], dist}, mask, inv_scale);
    }
  } else {
    const std::size_t threads = std::min(workers, n);
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t j = w; j < n; j += threads) {
          try {
            ParamStore clone = theta;
            for (std::size_t k = 0; k < j; ++k) {
              probe_round_trip(clone, EstimatorKind::spsa, epsilon, {out.record.seeds[k], dist}, mask, inv_scale);
            }
            probes[j] = spsa_probe(clone, obj, batch, epsilon, {out.record.seeds[j], dist}, mask, inv_scale);
          } catch (...) {
            errors[j] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    for (std::size_t j = 0; j < n; ++j) {
      probe_round_trip(theta, EstimatorKind::spsa, epsilon, {out.record.seeds[j], dist}, mask, inv_scale);
    }
  }

  out.record.projected_grads.resize(n);
  double loss_sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out.record.projected_grads[j] = probes[j].projected_grad;
    loss_sum += probes[j].loss_plus + probes[j].loss_minus;
  }
  out.mean_loss = loss_sum / static_cast<double>(2 * n);
  return out;
}

ProbeResult OnePointEstimator::step(ParamStore& theta, const Objective& obj, std::span<const std::size_t> batch,
                                    double epsilon, const NoiseSpec& noise, const GroupMask& mask) {
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be > 0");
  ProbeResult out;
  add_scaled_noise(theta, noise, epsilon, mask);
  try {
    out.loss_plus = obj.eval(theta, batch);
  } catch (...) {
    add_scaled_noise(theta, noise, -epsilon, mask);
    throw;
  }
  add_scaled_noise(theta, noise, -epsilon, mask);
  if (!std::isfinite(out.loss_plus)) throw NonFiniteLoss("plus", out.loss_plus);
  out.loss_minus = previous_.value_or(out.loss_plus);
  out.projected_grad = previous_ ? (out.loss_plus - *previous_) / epsilon : 0.0;
  previous_ = out.loss_plus;
  return out;
}

std::vector<double> reciprocal_scale(std::span<const double> group_scale) {
  std::vector<double> inv;
  inv.reserve(group_scale.size());
  for (double v : group_scale) {
    if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument("scale entries must be finite and > 0");
    inv.push_back(1.0 / v);
  }
  return inv;
}

std::vector<double> update_scale(EstimatorKind kind, std::span<const double> group_scale) {
  if (kind != EstimatorKind::variance_modified) return {};
  return {group_scale.begin(), group_scale.end()};
}

double variance_modified_spsa(ParamStore& theta, const Objective& obj, std::span<const std::size_t> batch,
                              double epsilon, const NoiseSpec& noise, std::span<const double> group_scale,
                              const GroupMask& mask) {
  const auto inv = reciprocal_scale(group_scale);
  return spsa_probe(theta, obj, batch, epsilon, noise, mask, inv).projected_grad;
}

double expectation_modified_spsa(ParamStore& theta, const Objective& obj, std::span<const std::size_t> batch,
                                 double epsilon, const NoiseSpec& noise, std::span<const double> group_scale,
                                 const GroupMask& mask) {
  return variance_modified_spsa(theta, obj, batch, epsilon, noise, group_scale, mask);
}

double zo_group_grad_norm(ParamStore& theta, const Objective& obj, std::span<const std::size_t> batch,
                          double epsilon, const NoiseSpec& noise, std::string_view group) {
  const std::size_t g = theta.group_index(group);
  GroupMask mask(theta.groups().size(), false);
  mask[g] = true;
  return std::abs(spsa_probe(theta, obj, batch, epsilon, noise, mask).projected_grad);
}

std::vector<double> build_scale_vector(const ParamStore& theta, const Objective* obj, std::span<const std::size_t> batch,
                                       const EstimatorConfig& config, const GroupMask& mask, Seed master,
                                       std::uint64_t step) {
  const auto& groups = theta.groups();
  std::vector<double> scale(groups.size(), 1.0);
  switch (config.scale_source) {
    case ScaleSource::ones:
      break;
    case ScaleSource::external:
      if (config.external_scale.size() != groups.size()) {
        throw InvalidArgument("external scale has " + std::to_string(config.external_scale.size()) +
                              " entries for " + std::to_string(groups.size()) + " groups");
      }
      for (std::size_t g = 0; g < groups.size(); ++g) {
        if (mask[g]) scale[g] = config.external_scale[g];
      }
      break;
    case ScaleSource::param_norm: {
      const auto values = theta.values();
      for (std::size_t g = 0; g < groups.size(); ++g) {
        if (!mask[g]) continue;
        double sum = 0.0;
        for (std::size_t i = groups[g].offset; i < groups[g].offset + groups[g].length; ++i) sum += values[i] * values[i];
        scale[g] = std::max(std::sqrt(sum), config.min_scale);
      }
      break;
    }
    case ScaleSource::grad_norm: {
      if (obj == nullptr) throw InvalidArgument("grad_norm scale needs an objective");
      const Seed base = derive_step_seed(master, step, kScaleLane);
      // Probes run on a copy so the caller's parameters keep no rounding residue.
      ParamStore scratch = theta;
      for (std::size_t g = 0; g < groups.size(); ++g) {
        if (!mask[g]) continue;
        double sum = 0.0;
        for (std::size_t k = 0; k < config.norm_probes; ++k) {
          const Seed seed = derive_step_seed(base, g, static_cast<std::uint32_t>(k));
          const double est = zo_group_grad_norm(scratch, *obj, batch, config.epsilon, {seed, ZDist::gaussian},
                                                groups[g].name);
          sum += est * est;
        }
        scale[g] = std::max(std::sqrt(sum / static_cast<double>(config.norm_probes)), config.min_scale);
      }
      break;
    }
  }
  return scale;
}

}  // namespace zoforge
