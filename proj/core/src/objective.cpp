#include "zoforge/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "zoforge/errors.hpp"

namespace zoforge {

std::vector<double> Objective::gradient(const ParamStore&, std::span<const std::size_t>) const {
  throw InvalidArgument("objective '" + name() + "' has no analytic gradient");
}

std::vector<std::size_t> full_batch(const Objective& obj) {
  std::vector<std::size_t> idx(obj.dataset_size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

double full_loss(const Objective& obj, const ParamStore& theta) {
  const auto batch = full_batch(obj);
  return obj.eval(theta, batch);
}

ParamStore init_params(const Objective& obj, Seed seed, double scale) {
  ParamStore store = obj.blueprint();
  if (scale != 0.0) add_scaled_noise(store, {seed, ZDist::gaussian}, scale, GroupMask(store.groups().size(), true));
  return store;
}

namespace {

void require_oracle(const Objective& obj) {
  if (!obj.has_gradient()) throw InvalidArgument("objective '" + obj.name() + "' has no analytic gradient");
}

std::vector<std::vector<double>> example_gradients(const Objective& obj, const ParamStore& theta) {
  require_oracle(obj);
  std::vector<std::vector<double>> grads;
  grads.reserve(obj.dataset_size());
  for (std::size_t i = 0; i < obj.dataset_size(); ++i) {
    const std::size_t one[] = {i};
    grads.push_back(obj.gradient(theta, one));
  }
  return grads;
}

}  // namespace

double max_example_grad_norm(const Objective& obj, const ParamStore& theta) {
  double best = 0.0;
  for (const auto& g : example_gradients(obj, theta)) {
    best = std::max(best, std::sqrt(std::inner_product(g.begin(), g.end(), g.begin(), 0.0)));
  }
  return best;
}

double estimate_sigma_trace(const Objective& obj, const ParamStore& theta, std::size_t batch_size) {
  require_oracle(obj);
  const std::size_t n = obj.dataset_size();
  if (batch_size == 0 || batch_size > n) {
    throw InvalidArgument("batch size " + std::to_string(batch_size) + " not in [1, " + std::to_string(n) + "]");
  }
  if (n == 1) return 0.0;
  const auto grads = example_gradients(obj, theta);
  const std::size_t d = theta.size();
  std::vector<double> mean(d, 0.0);
  for (const auto& g : grads) {
    for (std::size_t k = 0; k < d; ++k) mean[k] += g[k];
  }
  for (double& m : mean) m /= static_cast<double>(n);
  double spread = 0.0;
  for (const auto& g : grads) {
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = g[k] - mean[k];
      spread += diff * diff;
    }
  }
  const double population = spread / static_cast<double>(n);
  const double finite_population = static_cast<double>(n - batch_size) / static_cast<double>(n - 1);
  return population * finite_population;
}

GaussNewtonRank gauss_newton_effective_rank(const Objective& obj, const ParamStore& theta) {
  const auto grads = example_gradients(obj, theta);
  const auto d = static_cast<Eigen::Index>(theta.size());
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
  for (const auto& g : grads) {
    const Eigen::Map<const Eigen::VectorXd> v(g.data(), d);
    m.noalias() += v * v.transpose();
  }
  m /= static_cast<double>(grads.size());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
  GaussNewtonRank out;
  out.trace = m.trace();
  out.top_eigenvalue = solver.eigenvalues().maxCoeff();
  out.effective_rank = out.top_eigenvalue > 0.0 ? out.trace / out.top_eigenvalue : 0.0;
  return out;
}

std::vector<double> finite_difference_gradient(const Objective& obj, const ParamStore& theta,
                                               std::span<const std::size_t> batch, double h) {
  ParamStore probe = theta;
  auto values = probe.values();
  std::vector<double> grad(theta.size());
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double saved = values[k];
    values[k] = saved + h;
    const double plus = obj.eval(probe, batch);
    values[k] = saved - h;
    const double minus = obj.eval(probe, batch);
    values[k] = saved;
    grad[k] = (plus - minus) / (2.0 * h);
  }
  return grad;
}

}  // namespace zoforge
