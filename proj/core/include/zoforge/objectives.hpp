#pragma once

// Concrete objectives: quadratics with a chosen spectrum, linear logistic
// models, a small tanh MLP, classification metrics and a cubic probe.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "zoforge/dataset.hpp"
#include "zoforge/objective.hpp"

namespace zoforge {

// ---------------------------------------------------------------- quadratic

struct QuadraticSpec {
  /// Diagonal Hessian, all entries >= 0 and at least one > 0.
  std::vector<double> eigenvalues;
  /// Minimizer; empty means the origin.
  std::vector<double> optimum;
  /// Optional per-example linear terms s_i. Example i contributes
  /// s_i^T (theta - optimum) on top of the shared quadratic; the shifts are
  /// centered on construction so the full-batch loss keeps its minimum 0.
  /// Empty means a single full-batch example.
  std::vector<std::vector<double>> example_shifts;
};

/// d eigenvalues: `rank` ones followed by zeros, so l = 1 and r = rank.
QuadraticSpec low_rank_quadratic(std::size_t d, std::size_t rank);

/// `count` shift vectors of dimension d with N(0, scale^2) entries.
std::vector<std::vector<double>> gaussian_shifts(std::size_t count, std::size_t d, double scale, Seed seed);

/// L(theta; B) = 1/2 sum_k lambda_k (theta_k - mu_k)^2 + mean_{i in B} s_i^T (theta - mu).
class QuadraticObjective final : public Objective {
 public:
  explicit QuadraticObjective(QuadraticSpec spec);

  std::string name() const override { return "quadratic"; }
  std::size_t dataset_size() const override { return shifts_.empty() ? 1 : shifts_.size(); }
  /// One group "theta" at the origin.
  ParamStore blueprint() const override;
  double eval(const ParamStore& theta, std::span<const std::size_t> batch) const override;
  bool has_gradient() const override { return true; }
  std::vector<double> gradient(const ParamStore& theta, std::span<const std::size_t> batch) const override;

  std::size_t dim() const noexcept { return lambda_.size(); }
  const std::vector<double>& eigenvalues() const noexcept { return lambda_; }
  const std::vector<double>& optimum() const noexcept { return mu_; }
  /// Smoothness constant, the largest eigenvalue.
  double ell() const noexcept { return ell_; }
  /// Effective rank sum(lambda) / max(lambda).
  double effective_rank() const noexcept { return rank_; }
  /// PL constant on the span of the nonzero modes: the smallest nonzero eigenvalue.
  double mu_pl() const noexcept { return mu_pl_; }
  double optimal_loss() const noexcept { return 0.0; }

 private:
  std::vector<double> lambda_;
  std::vector<double> mu_;
  std::vector<std::vector<double>> shifts_;
  double ell_ = 0.0;
  double rank_ = 0.0;
  double mu_pl_ = 0.0;
};

// ----------------------------------------------------------------- logistic

enum class LogisticLoss : std::uint8_t {
  /// (1/|B|) sum exp(-y theta^T x)
  exp_margin,
  /// (1/|B|) sum log(1 + exp(-y theta^T x))
  log_sigmoid,
};

std::string_view to_string(LogisticLoss loss) noexcept;
LogisticLoss parse_logistic_loss(std::string_view text);

struct HessianSpectrum {
  double trace = 0.0;
  double top_eigenvalue = 0.0;
  double effective_rank = 0.0;
};

/// Linear binary classifier without bias, group "w". Labels 0/1 map to
/// y = -1/+1.
class LogisticObjective final : public Classifier {
 public:
  LogisticObjective(Dataset data, LogisticLoss loss);

  std::string name() const override { return "logistic"; }
  std::size_t dataset_size() const override { return data_.samples; }
  ParamStore blueprint() const override;
  double eval(const ParamStore& theta, std::span<const std::size_t> batch) const override;
  bool has_gradient() const override { return true; }
  std::vector<double> gradient(const ParamStore& theta, std::span<const std::size_t> batch) const override;

  const Dataset& data() const override { return data_; }
  int predict(const ParamStore& theta, std::size_t example) const override;

  LogisticLoss loss() const noexcept { return loss_; }
  /// Exact full-batch Hessian spectrum at theta.
  HessianSpectrum hessian_spectrum(const ParamStore& theta) const;

 private:
  double margin(std::span<const double> w, std::size_t i) const;

  Dataset data_;
  LogisticLoss loss_;
};

// ---------------------------------------------------------------------- mlp

enum class MlpLoss : std::uint8_t { square, cross_entropy };

std::string_view to_string(MlpLoss loss) noexcept;
MlpLoss parse_mlp_loss(std::string_view text);

/// Fully connected network with tanh hidden layers and a linear output.
///
/// `layers` lists widths from input to output, e.g. {2, 4, 1}. Layer k owns
/// groups "W<k>" (out x in, row-major) and "b<k>". Square loss is
/// 0.5 * ||f - y||^2 averaged over the batch, with y the label itself for a
/// single output and a one-hot vector otherwise. Cross-entropy applies a
/// softmax over the outputs. Low-rank adapters on any "W<k>" are honored.
class MlpObjective final : public Classifier {
 public:
  MlpObjective(Dataset data, std::vector<std::size_t> layers, MlpLoss loss);

  std::string name() const override { return "mlp"; }
  std::size_t dataset_size() const override { return data_.samples; }
  ParamStore blueprint() const override;
  double eval(const ParamStore& theta, std::span<const std::size_t> batch) const override;
  bool has_gradient() const override { return true; }
  std::vector<double> gradient(const ParamStore& theta, std::span<const std::size_t> batch) const override;

  const Dataset& data() const override { return data_; }
  int predict(const ParamStore& theta, std::size_t example) const override;

  const std::vector<std::size_t>& layers() const noexcept { return layers_; }

 private:
  struct Weights;
  Weights weights(const ParamStore& theta) const;
  std::vector<double> forward(const Weights& w, std::size_t example, std::vector<std::vector<double>>* acts) const;
  double example_loss(std::span<const double> out, int label, std::vector<double>* dout) const;

  Dataset data_;
  std::vector<std::size_t> layers_;
  MlpLoss loss_;
};

// ------------------------------------------------------------------- metric

enum class Metric : std::uint8_t { accuracy, macro_f1 };

std::string_view to_string(Metric metric) noexcept;
Metric parse_metric(std::string_view text);

/// Macro-averaged F1 over the classes that occur in `labels` or
/// `predictions`.
double macro_f1(std::span<const int> labels, std::span<const int> predictions);

/// Negated accuracy or macro-F1 of a classifier on the batch. Piecewise
/// constant in theta and bounded in [-1, 0]; no gradient.
class MetricObjective final : public Objective {
 public:
  MetricObjective(const Classifier& model, Metric metric) : model_(model), metric_(metric) {}

  std::string name() const override { return "metric"; }
  std::size_t dataset_size() const override { return model_.dataset_size(); }
  ParamStore blueprint() const override { return model_.blueprint(); }
  double eval(const ParamStore& theta, std::span<const std::size_t> batch) const override;

  Metric metric() const noexcept { return metric_; }

 private:
  const Classifier& model_;
  Metric metric_;
};

// -------------------------------------------------------------------- cubic

/// L(theta) = sum_k theta_k^3 / 6, a single full-batch example. Its third
/// derivative is constant, which makes the SPSA bias exactly quadratic in
/// the perturbation scale.
class CubicObjective final : public Objective {
 public:
  explicit CubicObjective(std::size_t dim) : dim_(dim) {}

  std::string name() const override { return "cubic"; }
  std::size_t dataset_size() const override { return 1; }
  ParamStore blueprint() const override;
  double eval(const ParamStore& theta, std::span<const std::size_t> batch) const override;
  bool has_gradient() const override { return true; }
  std::vector<double> gradient(const ParamStore& theta, std::span<const std::size_t> batch) const override;

 private:
  std::size_t dim_;
};

}  // namespace zoforge
