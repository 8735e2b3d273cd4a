#include <cmath>

#include <Eigen/Dense>

#include "zoforge/errors.hpp"
#include "zoforge/objectives.hpp"

namespace zoforge {

std::string_view to_string(LogisticLoss loss) noexcept {
  return loss == LogisticLoss::exp_margin ? "exp_margin" : "log_sigmoid";
}

LogisticLoss parse_logistic_loss(std::string_view text) {
  if (text == "exp_margin") return LogisticLoss::exp_margin;
  if (text == "log_sigmoid") return LogisticLoss::log_sigmoid;
  throw InvalidArgument("unknown logistic loss '" + std::string(text) + "' (expected exp_margin or log_sigmoid)");
}

namespace {

double sign_of(int label) { return label == 1 ? 1.0 : -1.0; }

// log(1 + exp(-m)) without overflow.
double softplus_neg(double m) { return m > 0.0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m)); }

// 1 / (1 + exp(m)), the derivative magnitude of softplus_neg.
double sigmoid_neg(double m) {
  if (m >= 0.0) {
    const double e = std::exp(-m);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(m));
}

}  // namespace

LogisticObjective::LogisticObjective(Dataset data, LogisticLoss loss) : data_(std::move(data)), loss_(loss) {
  if (data_.classes != 2) throw InvalidArgument("logistic objective needs binary labels");
  for (int label : data_.labels) {
    if (label != 0 && label != 1) throw InvalidArgument("logistic labels must be 0 or 1");
  }
}

ParamStore LogisticObjective::blueprint() const {
  return ParamStore({GroupDesc{"w", 0, data_.features, true, 1, data_.features}});
}

double LogisticObjective::margin(std::span<const double> w, std::size_t i) const {
  const auto x = data_.row(i);
  double dot = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) dot += w[j] * x[j];
  return sign_of(data_.labels[i]) * dot;
}

double LogisticObjective::eval(const ParamStore& theta, std::span<const std::size_t> batch) const {
  if (batch.empty()) throw InvalidArgument("empty batch");
  const auto w = theta.values();
  double sum = 0.0;
  for (std::size_t i : batch) {
    const double m = margin(w, i);
    sum += loss_ == LogisticLoss::exp_margin ? std::exp(-m) : softplus_neg(m);
  }
  return sum / static_cast<double>(batch.size());
}

std::vector<double> LogisticObjective::gradient(const ParamStore& theta, std::span<const std::size_t> batch) const {
  if (batch.empty()) throw InvalidArgument("empty batch");
  const auto w = theta.values();
  std::vector<double> g(data_.features, 0.0);
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i : batch) {
    const double m = margin(w, i);
    const double weight = loss_ == LogisticLoss::exp_margin ? std::exp(-m) : sigmoid_neg(m);
    const double coeff = -inv * weight * sign_of(data_.labels[i]);
    const auto x = data_.row(i);
    for (std::size_t j = 0; j < x.size(); ++j) g[j] += coeff * x[j];
  }
  return g;
}

int LogisticObjective::predict(const ParamStore& theta, std::size_t example) const {
  const auto w = theta.values();
  const auto x = data_.row(example);
  double dot = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) dot += w[j] * x[j];
  return dot >= 0.0 ? 1 : 0;
}

HessianSpectrum LogisticObjective::hessian_spectrum(const ParamStore& theta) const {
  const auto w = theta.values();
  const auto d = static_cast<Eigen::Index>(data_.features);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < data_.samples; ++i) {
    const double m = margin(w, i);
    double weight = 0.0;
    if (loss_ == LogisticLoss::exp_margin) {
      weight = std::exp(-m);
    } else {
      const double s = sigmoid_neg(m);
      weight = s * (1.0 - s);
    }
    const auto x = data_.row(i);
    const Eigen::Map<const Eigen::VectorXd> v(x.data(), d);
    h.noalias() += weight * v * v.transpose();
  }
  h /= static_cast<double>(data_.samples);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(h, Eigen::EigenvaluesOnly);
  HessianSpectrum out;
  out.trace = h.trace();
  out.top_eigenvalue = solver.eigenvalues().maxCoeff();
  out.effective_rank = out.top_eigenvalue > 0.0 ? out.trace / out.top_eigenvalue : 0.0;
  return out;
}

}  // namespace zoforge
