#include "zoforge/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "bytes.hpp"
#include "zoforge/errors.hpp"

namespace zoforge {

std::string_view to_string(Algo algo) noexcept {
  switch (algo) {
    case Algo::sgd: return "sgd";
    case Algo::momentum: return "momentum";
    case Algo::adam: return "adam";
  }
  return "unknown";
}

Algo parse_algo(std::string_view text) {
  if (text == "sgd") return Algo::sgd;
  if (text == "momentum") return Algo::momentum;
  if (text == "adam") return Algo::adam;
  throw InvalidArgument("unknown optimizer '" + std::string(text) + "' (expected sgd, momentum or adam)");
}

std::string_view to_string(HistoryMode mode) noexcept { return mode == HistoryMode::dense ? "dense" : "reconstruct"; }

HistoryMode parse_history_mode(std::string_view text) {
  if (text == "dense") return HistoryMode::dense;
  if (text == "reconstruct") return HistoryMode::reconstruct;
  throw InvalidArgument("unknown history mode '" + std::string(text) + "' (expected dense or reconstruct)");
}

void OptimizerConfig::validate() const {
  const auto in_unit = [](double b) { return b >= 0.0 && b < 1.0; };
  if (!in_unit(beta1)) throw InvalidArgument("beta1 must lie in [0, 1)");
  if (!in_unit(beta2)) throw InvalidArgument("beta2 must lie in [0, 1)");
  if (!(eps_adam > 0.0)) throw InvalidArgument("eps_adam must be > 0");
  if (!(lr.eta0 >= 0.0) || !std::isfinite(lr.eta0)) throw InvalidArgument("learning rate must be finite and >= 0");
  if (!(weight_decay >= 0.0)) throw InvalidArgument("weight decay must be >= 0");
  if (n_schedule.n0 == 0 || n_schedule.n1 == 0) throw InvalidArgument("n schedule values must be >= 1");
  if (n_schedule.n0 > 0xFFFF || n_schedule.n1 > 0xFFFF) throw InvalidArgument("n schedule values must fit 16 bits");
  if (history == HistoryMode::reconstruct && algo == Algo::sgd) {
    throw InvalidArgument("reconstruct history applies to momentum and adam only");
  }
}

std::size_t OptimizerConfig::resolved_window() const {
  if (history_window != 0) return history_window;
  double beta = beta1;
  if (algo == Algo::adam) beta = std::max(beta1, beta2);
  if (beta <= 0.0) return 1;
  return static_cast<std::size_t>(std::ceil(std::log(1e-8) / std::log(beta)));
}

OptimizerConfig OptimizerConfig::with_horizon(std::uint64_t steps) const {
  OptimizerConfig out = *this;
  if (out.lr.total_steps == 0) out.lr.total_steps = steps;
  if (out.n_schedule.total_steps == 0) out.n_schedule.total_steps = steps;
  return out;
}

double OptimizerConfig::lr_for_step(std::uint64_t t) const {
  const double base = lr_at(lr, t);
  if (!couple_lr_to_n) return base;
  return base * static_cast<double>(n_at(n_schedule, t)) / static_cast<double>(n_schedule.n0);
}

// ------------------------------------------------------------------ Updater

Updater::Updater(OptimizerConfig config, std::size_t dim, std::size_t group_count)
    : config_(std::move(config)), dim_(dim), group_count_(group_count) {
  config_.validate();
  if (config_.algo != Algo::sgd) {
    if (config_.history == HistoryMode::dense) {
      m_.assign(dim_, 0.0);
      audit_.dense_vectors = 1;
      if (config_.algo == Algo::adam) {
        v_.assign(dim_, 0.0);
        audit_.dense_vectors = 2;
      }
      note_persistent(m_.size() + v_.size());
    } else {
      window_ = config_.resolved_window();
    }
  }
}

void Updater::note_persistent(std::size_t scalars) {
  audit_.persistent_scalars = scalars;
  audit_.peak_persistent_scalars = std::max(audit_.peak_persistent_scalars, scalars);
}

void Updater::apply(ParamStore& theta, const GradRecord& record, ZDist dist, const GroupMask& mask,
                    std::span<const double> update_scale, double lr) {
  if (theta.size() != dim_ || theta.groups().size() != group_count_) {
    throw InvalidArgument("parameter store does not match the optimizer's layout");
  }
  if (record.seeds.size() != record.projected_grads.size() || record.seeds.empty()) {
    throw InvalidArgument("gradient record has mismatched or empty probes");
  }
  if (!update_scale.empty() && update_scale.size() != group_count_) {
    throw InvalidArgument("update scale size does not match group count");
  }
  if (config_.algo == Algo::sgd) {
    apply_sgd(theta, record, dist, mask, update_scale, lr);
  } else if (config_.history == HistoryMode::dense) {
    apply_dense(theta, record, dist, mask, update_scale, lr);
  } else {
    apply_reconstruct(theta, record, dist, mask, update_scale, lr);
  }
  apply_weight_decay(theta, mask, lr);
  ++steps_;
}

void Updater::apply_sgd(ParamStore& theta, const GradRecord& record, ZDist dist, const GroupMask& mask,
                        std::span<const double> update_scale, double lr) {
  const double n = static_cast<double>(record.seeds.size());
  for (std::size_t j = 0; j < record.seeds.size(); ++j) {
    add_scaled_noise(theta, {record.seeds[j], dist}, -lr * record.projected_grads[j] / n, mask, update_scale);
  }
}

namespace {

double group_scale_at(std::span<const double> scale, std::size_t g) { return scale.empty() ? 1.0 : scale[g]; }

}  // namespace

void Updater::apply_dense(ParamStore& theta, const GradRecord& record, ZDist dist, const GroupMask& mask,
                          std::span<const double> update_scale, double lr) {
  const auto& groups = theta.groups();
  const std::size_t masked = theta.masked_count(mask);
  const double n = static_cast<double>(record.seeds.size());

  std::vector<double> g(dim_, 0.0);
  audit_.peak_transient_scalars = std::max(audit_.peak_transient_scalars, g.size());
  for (std::size_t j = 0; j < record.seeds.size(); ++j) {
    if (masked == 0) break;
    auto stream = NoiseStream::make(record.seeds[j], dist, masked);
    const double c = record.projected_grads[j] / n;
    for (std::size_t k = 0; k < groups.size(); ++k) {
      if (!mask[k]) continue;
      const double coeff = c * group_scale_at(update_scale, k);
      for (std::size_t i = groups[k].offset; i < groups[k].offset + groups[k].length; ++i) g[i] += coeff * stream.next();
    }
  }

  auto values = theta.values();
  const double b1 = config_.beta1;
  if (config_.algo == Algo::momentum) {
    for (std::size_t i = 0; i < dim_; ++i) m_[i] = b1 * m_[i] + (1.0 - b1) * g[i];
    for (std::size_t k = 0; k < groups.size(); ++k) {
      if (!mask[k]) continue;
      for (std::size_t i = groups[k].offset; i < groups[k].offset + groups[k].length; ++i) {
        values[i] = theta.stored(values[i] - lr * m_[i]);
      }
    }
    return;
  }

  const double b2 = config_.beta2;
  const double t = static_cast<double>(steps_ + 1);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < dim_; ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * g[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * g[i] * g[i];
  }
  for (std::size_t k = 0; k < groups.size(); ++k) {
    if (!mask[k]) continue;
    for (std::size_t i = groups[k].offset; i < groups[k].offset + groups[k].length; ++i) {
      const double m_hat = m_[i] / c1;
      const double v_hat = v_[i] / c2;
      values[i] = theta.stored(values[i] - lr * m_hat / (std::sqrt(v_hat) + config_.eps_adam));
    }
  }
}

void Updater::apply_reconstruct(ParamStore& theta, const GradRecord& record, ZDist dist, const GroupMask& mask,
                                std::span<const double> update_scale, double lr) {
  const std::uint64_t now = steps_;
  history_.push_back({record, mask, {update_scale.begin(), update_scale.end()}, now});
  while (history_.size() > window_) history_.pop_front();

  std::size_t held = 0;
  for (const auto& e : history_) held += 2 * e.record.seeds.size() + e.scale.size() + e.mask.size() + 1;
  note_persistent(held);

  const auto& groups = theta.groups();
  const bool adam = config_.algo == Algo::adam;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;

  // One open stream per (record, probe), advanced group by group.
  std::vector<std::vector<NoiseStream>> streams;
  std::vector<std::vector<double>> coeffs;
  std::vector<double> w1;
  std::vector<double> w2;
  streams.reserve(history_.size());
  for (const auto& e : history_) {
    const std::size_t masked = theta.masked_count(e.mask);
    std::vector<NoiseStream> probe_streams;
    std::vector<double> probe_coeffs;
    const double n = static_cast<double>(e.record.seeds.size());
    for (std::size_t j = 0; j < e.record.seeds.size(); ++j) {
      if (masked > 0) probe_streams.push_back(NoiseStream::make(e.record.seeds[j], dist, masked));
      probe_coeffs.push_back(e.record.projected_grads[j] / n);
    }
    streams.push_back(std::move(probe_streams));
    coeffs.push_back(std::move(probe_coeffs));
    const double age = static_cast<double>(now - e.index);
    w1.push_back((1.0 - b1) * std::pow(b1, age));
    w2.push_back((1.0 - b2) * std::pow(b2, age));
  }

  std::size_t max_group = 0;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    if (mask[k]) max_group = std::max(max_group, groups[k].length);
  }
  std::vector<double> gs;
  std::vector<double> m;
  std::vector<double> v;
  gs.reserve(max_group);
  m.reserve(max_group);
  if (adam) v.reserve(max_group);
  audit_.peak_transient_scalars = std::max(audit_.peak_transient_scalars, (adam ? 3 : 2) * max_group);

  const double t = static_cast<double>(now + 1);
  const double c1 = adam ? 1.0 - std::pow(b1, t) : 1.0;
  const double c2 = adam ? 1.0 - std::pow(b2, t) : 1.0;
  auto values = theta.values();

  for (std::size_t k = 0; k < groups.size(); ++k) {
    const std::size_t len = groups[k].length;
    const bool active = mask[k];
    if (active) {
      m.assign(len, 0.0);
      if (adam) v.assign(len, 0.0);
    }
    for (std::size_t e = 0; e < history_.size(); ++e) {
      const auto& entry = history_[e];
      if (!entry.mask[k]) continue;
      gs.assign(len, 0.0);
      for (std::size_t j = 0; j < streams[e].size(); ++j) {
        const double coeff = coeffs[e][j] * group_scale_at(entry.scale, k);
        for (std::size_t i = 0; i < len; ++i) gs[i] += coeff * streams[e][j].next();
      }
      if (!active) continue;
      for (std::size_t i = 0; i < len; ++i) {
        m[i] += w1[e] * gs[i];
        if (adam) v[i] += w2[e] * gs[i] * gs[i];
      }
    }
    if (!active) continue;
    const std::size_t base = groups[k].offset;
    for (std::size_t i = 0; i < len; ++i) {
      double step = 0.0;
      if (adam) {
        step = (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps_adam);
      } else {
        step = m[i];
      }
      values[base + i] = theta.stored(values[base + i] - lr * step);
    }
  }
}

void Updater::apply_weight_decay(ParamStore& theta, const GroupMask& mask, double lr) const {
  if (config_.weight_decay == 0.0) return;
  const double factor = 1.0 - lr * config_.weight_decay;
  const auto& groups = theta.groups();
  auto values = theta.values();
  for (std::size_t k = 0; k < groups.size(); ++k) {
    if (!mask[k]) continue;
    for (std::size_t i = groups[k].offset; i < groups[k].offset + groups[k].length; ++i) {
      values[i] = theta.stored(values[i] * factor);
    }
  }
}

// ------------------------------------------------------------------- stages

StagePlan resolve_stages(const ParamStore& store, const std::vector<Stage>& stages, std::uint64_t total_steps) {
  if (total_steps == 0) throw InvalidArgument("a run needs at least one step");
  StagePlan plan;
  if (stages.empty()) {
    plan.push_back({store.trainable_mask(), total_steps});
  } else {
    std::uint64_t sum = 0;
    for (const auto& stage : stages) {
      if (stage.steps == 0) throw InvalidArgument("stage with zero steps");
      GroupMask mask(store.groups().size(), false);
      if (stage.groups.empty() || (stage.groups.size() == 1 && stage.groups[0] == "all")) {
        mask = store.trainable_mask();
      } else {
        for (const auto& name : stage.groups) mask[store.group_index(name)] = true;
      }
      plan.push_back({std::move(mask), stage.steps});
      sum += stage.steps;
    }
    if (sum != total_steps) {
      throw InvalidArgument("stage budgets sum to " + std::to_string(sum) + " but the run has " +
                            std::to_string(total_steps) + " steps");
    }
  }
  for (const auto& stage : plan) {
    if (store.masked_count(stage.mask) == 0) throw InvalidArgument("stage trains no parameters");
  }
  return plan;
}

const GroupMask& mask_at(const StagePlan& plan, std::uint64_t t) {
  std::uint64_t end = 0;
  for (const auto& stage : plan) {
    end += stage.steps;
    if (t < end) return stage.mask;
  }
  throw InvalidArgument("step " + std::to_string(t) + " lies beyond the stage plan");
}

std::uint64_t plan_layout_hash(const ParamStore& store, const StagePlan& plan) {
  std::vector<std::uint8_t> bytes;
  for (const auto& g : store.groups()) {
    bytes.insert(bytes.end(), g.name.begin(), g.name.end());
    bytes.push_back(0);
    detail::put_le<std::uint64_t>(bytes, g.offset);
    detail::put_le<std::uint64_t>(bytes, g.length);
  }
  for (const auto& stage : plan) {
    for (bool b : stage.mask) bytes.push_back(b ? 1 : 0);
    detail::put_le<std::uint64_t>(bytes, stage.steps);
  }
  return detail::fnv1a(bytes);
}

}  // namespace zoforge
