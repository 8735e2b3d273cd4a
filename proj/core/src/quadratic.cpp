#include <algorithm>
#include <cmath>

#include "zoforge/errors.hpp"
#include "zoforge/objectives.hpp"

namespace zoforge {

namespace {

void require_nonempty(std::span<const std::size_t> batch) {
  if (batch.empty()) throw InvalidArgument("empty batch");
}

}  // namespace

QuadraticSpec low_rank_quadratic(std::size_t d, std::size_t rank) {
  if (rank == 0 || rank > d) throw InvalidArgument("rank must lie in [1, d]");
  QuadraticSpec spec;
  spec.eigenvalues.assign(d, 0.0);
  std::fill_n(spec.eigenvalues.begin(), rank, 1.0);
  return spec;
}

std::vector<std::vector<double>> gaussian_shifts(std::size_t count, std::size_t d, double scale, Seed seed) {
  auto stream = NoiseStream::gaussian(seed);
  std::vector<std::vector<double>> shifts(count, std::vector<double>(d));
  for (auto& s : shifts) {
    for (double& v : s) v = scale * stream.next();
  }
  return shifts;
}

QuadraticObjective::QuadraticObjective(QuadraticSpec spec)
    : lambda_(std::move(spec.eigenvalues)), mu_(std::move(spec.optimum)), shifts_(std::move(spec.example_shifts)) {
  if (lambda_.empty()) throw InvalidArgument("quadratic needs at least one eigenvalue");
  for (double l : lambda_) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw InvalidArgument("quadratic eigenvalues must be finite and >= 0");
  }
  ell_ = *std::max_element(lambda_.begin(), lambda_.end());
  if (ell_ == 0.0) throw InvalidArgument("quadratic spectrum is all zero");
  double sum = 0.0;
  mu_pl_ = ell_;
  for (double l : lambda_) {
    sum += l;
    if (l > 0.0) mu_pl_ = std::min(mu_pl_, l);
  }
  rank_ = sum / ell_;

  if (mu_.empty()) mu_.assign(lambda_.size(), 0.0);
  if (mu_.size() != lambda_.size()) throw InvalidArgument("optimum length does not match eigenvalue count");

  if (!shifts_.empty()) {
    std::vector<double> mean(lambda_.size(), 0.0);
    for (const auto& s : shifts_) {
      if (s.size() != lambda_.size()) throw InvalidArgument("shift length does not match eigenvalue count");
      for (std::size_t k = 0; k < s.size(); ++k) mean[k] += s[k];
    }
    for (double& m : mean) m /= static_cast<double>(shifts_.size());
    for (auto& s : shifts_) {
      for (std::size_t k = 0; k < s.size(); ++k) s[k] -= mean[k];
    }
  }
}

ParamStore QuadraticObjective::blueprint() const {
  return ParamStore({GroupDesc{"theta", 0, lambda_.size()}});
}

double QuadraticObjective::eval(const ParamStore& theta, std::span<const std::size_t> batch) const {
  require_nonempty(batch);
  const auto x = theta.values();
  double quad = 0.0;
  for (std::size_t k = 0; k < lambda_.size(); ++k) {
    const double diff = x[k] - mu_[k];
    quad += lambda_[k] * diff * diff;
  }
  double loss = 0.5 * quad;
  if (!shifts_.empty()) {
    double lin = 0.0;
    for (std::size_t i : batch) {
      const auto& s = shifts_.at(i);
      for (std::size_t k = 0; k < s.size(); ++k) lin += s[k] * (x[k] - mu_[k]);
    }
    loss += lin / static_cast<double>(batch.size());
  }
  return loss;
}

std::vector<double> QuadraticObjective::gradient(const ParamStore& theta, std::span<const std::size_t> batch) const {
  require_nonempty(batch);
  const auto x = theta.values();
  std::vector<double> g(lambda_.size());
  for (std::size_t k = 0; k < lambda_.size(); ++k) g[k] = lambda_[k] * (x[k] - mu_[k]);
  if (!shifts_.empty()) {
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i : batch) {
      const auto& s = shifts_.at(i);
      for (std::size_t k = 0; k < s.size(); ++k) g[k] += inv * s[k];
    }
  }
  return g;
}

ParamStore CubicObjective::blueprint() const { return ParamStore({GroupDesc{"theta", 0, dim_}}); }

double CubicObjective::eval(const ParamStore& theta, std::span<const std::size_t> batch) const {
  require_nonempty(batch);
  double sum = 0.0;
  for (double v : theta.values()) sum += v * v * v;
  return sum / 6.0;
}

std::vector<double> CubicObjective::gradient(const ParamStore& theta, std::span<const std::size_t> batch) const {
  require_nonempty(batch);
  std::vector<double> g;
  g.reserve(dim_);
  for (double v : theta.values()) g.push_back(0.5 * v * v);
  return g;
}

}  // namespace zoforge
