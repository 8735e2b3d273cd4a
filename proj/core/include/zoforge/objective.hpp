#pragma once

#include <atomic>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "zoforge/dataset.hpp"
#include "zoforge/param_store.hpp"

namespace zoforge {

/// Loss over a parameter store and a minibatch of example indices.
///
/// `eval` is a pure function of its arguments and is safe to call from
/// several threads on distinct or read-only stores. The analytic gradient
/// is an oracle for tests and theory checks; zeroth-order training never
/// calls it.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual std::string name() const = 0;
  virtual std::size_t dataset_size() const = 0;
  /// Parameter layout with default values.
  virtual ParamStore blueprint() const = 0;
  virtual double eval(const ParamStore& theta, std::span<const std::size_t> batch) const = 0;

  virtual bool has_gradient() const { return false; }
  /// Gradient of `eval` with respect to every entry of theta, trainable or
  /// not. Throws InvalidArgument when the objective has no oracle.
  virtual std::vector<double> gradient(const ParamStore& theta, std::span<const std::size_t> batch) const;
};

/// Objective whose model also classifies single examples.
class Classifier : public Objective {
 public:
  virtual const Dataset& data() const = 0;
  virtual int predict(const ParamStore& theta, std::size_t example) const = 0;
};

/// Forwards to another objective and counts `eval` calls.
class CountingObjective final : public Objective {
 public:
  explicit CountingObjective(const Objective& inner) : inner_(inner) {}

  std::string name() const override { return inner_.name(); }
  std::size_t dataset_size() const override { return inner_.dataset_size(); }
  ParamStore blueprint() const override { return inner_.blueprint(); }
  double eval(const ParamStore& theta, std::span<const std::size_t> batch) const override {
    evaluations_.fetch_add(1, std::memory_order_relaxed);
    return inner_.eval(theta, batch);
  }
  bool has_gradient() const override { return inner_.has_gradient(); }
  std::vector<double> gradient(const ParamStore& theta, std::span<const std::size_t> batch) const override {
    return inner_.gradient(theta, batch);
  }

  std::size_t evaluations() const noexcept { return evaluations_.load(std::memory_order_relaxed); }
  void reset() noexcept { evaluations_.store(0, std::memory_order_relaxed); }

 private:
  const Objective& inner_;
  mutable std::atomic<std::size_t> evaluations_{0};
};

/// Indices 0..N-1.
std::vector<std::size_t> full_batch(const Objective& obj);

/// Full-dataset loss.
double full_loss(const Objective& obj, const ParamStore& theta);

/// Blueprint plus scale * N(0, 1) noise drawn from `seed`, in group order.
ParamStore init_params(const Objective& obj, Seed seed, double scale);

/// Largest per-example gradient norm over the dataset.
double max_example_grad_norm(const Objective& obj, const ParamStore& theta);

/// Trace of the per-example gradient covariance Sigma = B (Cov of the
/// size-B minibatch gradient), exact over the dataset for batches drawn
/// uniformly without replacement. Zero for N = 1 or identical examples.
double estimate_sigma_trace(const Objective& obj, const ParamStore& theta, std::size_t batch_size);

/// Spectrum summary of the averaged gradient outer product (1/N) sum g_i g_i^T.
struct GaussNewtonRank {
  double trace = 0.0;
  double top_eigenvalue = 0.0;
  double effective_rank = 0.0;
};
GaussNewtonRank gauss_newton_effective_rank(const Objective& obj, const ParamStore& theta);

/// Central-difference gradient of the full-batch loss, step h.
std::vector<double> finite_difference_gradient(const Objective& obj, const ParamStore& theta,
                                               std::span<const std::size_t> batch, double h = 1e-5);

}  // namespace zoforge
