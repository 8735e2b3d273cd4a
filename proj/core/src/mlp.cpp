#include <algorithm>
#include <cmath>

#include "zoforge/errors.hpp"
#include "zoforge/objectives.hpp"

namespace zoforge {

std::string_view to_string(MlpLoss loss) noexcept { return loss == MlpLoss::square ? "square" : "cross_entropy"; }

MlpLoss parse_mlp_loss(std::string_view text) {
  if (text == "square") return MlpLoss::square;
  if (text == "cross_entropy") return MlpLoss::cross_entropy;
  throw InvalidArgument("unknown MLP loss '" + std::string(text) + "' (expected square or cross_entropy)");
}

namespace {

std::string weight_name(std::size_t layer) { return "W" + std::to_string(layer + 1); }
std::string bias_name(std::size_t layer) { return "b" + std::to_string(layer + 1); }

}  // namespace

struct MlpObjective::Weights {
  struct Layer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> w;  // effective weight, out x in
    std::span<const double> b;
    const AdapterSpec* adapter = nullptr;
  };
  std::vector<Layer> layers;
};

MlpObjective::MlpObjective(Dataset data, std::vector<std::size_t> layers, MlpLoss loss)
    : data_(std::move(data)), layers_(std::move(layers)), loss_(loss) {
  if (layers_.size() < 3) throw InvalidArgument("MLP needs an input, at least one hidden layer and an output");
  if (std::find(layers_.begin(), layers_.end(), std::size_t{0}) != layers_.end()) {
    throw InvalidArgument("MLP layer widths must be positive");
  }
  if (layers_.front() != data_.features) {
    throw InvalidArgument("MLP input width " + std::to_string(layers_.front()) + " does not match " +
                          std::to_string(data_.features) + " dataset features");
  }
  const std::size_t out = layers_.back();
  if (loss_ == MlpLoss::cross_entropy && out != data_.classes) {
    throw InvalidArgument("cross-entropy MLP needs one output per class");
  }
  if (loss_ == MlpLoss::square && out != 1 && out != data_.classes) {
    throw InvalidArgument("square-loss MLP needs one output or one output per class");
  }
}

ParamStore MlpObjective::blueprint() const {
  std::vector<GroupDesc> groups;
  std::size_t offset = 0;
  for (std::size_t k = 0; k + 1 < layers_.size(); ++k) {
    const std::size_t in = layers_[k];
    const std::size_t out = layers_[k + 1];
    groups.push_back({weight_name(k), offset, out * in, true, out, in});
    offset += out * in;
    groups.push_back({bias_name(k), offset, out});
    offset += out;
  }
  return ParamStore(std::move(groups));
}

MlpObjective::Weights MlpObjective::weights(const ParamStore& theta) const {
  Weights w;
  for (std::size_t k = 0; k + 1 < layers_.size(); ++k) {
    Weights::Layer layer;
    layer.in = layers_[k];
    layer.out = layers_[k + 1];
    const std::string name = weight_name(k);
    const auto& g = theta.group(name);
    if (g.length != layer.in * layer.out) throw InvalidArgument("parameter group '" + name + "' has the wrong size");
    layer.w = effective_weight(theta, name);
    layer.b = theta.group_values(bias_name(k));
    if (layer.b.size() != layer.out) throw InvalidArgument("parameter group '" + bias_name(k) + "' has the wrong size");
    layer.adapter = theta.adapter_for(name);
    w.layers.push_back(std::move(layer));
  }
  return w;
}

std::vector<double> MlpObjective::forward(const Weights& w, std::size_t example,
                                          std::vector<std::vector<double>>* acts) const {
  const auto x = data_.row(example);
  std::vector<double> a(x.begin(), x.end());
  if (acts != nullptr) acts->assign(1, a);
  for (std::size_t k = 0; k < w.layers.size(); ++k) {
    const auto& layer = w.layers[k];
    std::vector<double> z(layer.out);
    for (std::size_t i = 0; i < layer.out; ++i) {
      double acc = layer.b[i];
      for (std::size_t j = 0; j < layer.in; ++j) acc += layer.w[i * layer.in + j] * a[j];
      z[i] = acc;
    }
    const bool hidden = k + 1 < w.layers.size();
    if (hidden) {
      for (double& v : z) v = std::tanh(v);
    }
    a = std::move(z);
    if (acts != nullptr) acts->push_back(a);
  }
  return a;
}

double MlpObjective::example_loss(std::span<const double> out, int label, std::vector<double>* dout) const {
  if (dout != nullptr) dout->assign(out.size(), 0.0);
  if (loss_ == MlpLoss::square) {
    double loss = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      double target = 0.0;
      if (out.size() == 1) {
        target = static_cast<double>(label);
      } else {
        target = static_cast<int>(i) == label ? 1.0 : 0.0;
      }
      const double diff = out[i] - target;
      loss += 0.5 * diff * diff;
      if (dout != nullptr) (*dout)[i] = diff;
    }
    return loss;
  }
  const double peak = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (double v : out) sum += std::exp(v - peak);
  const double log_norm = peak + std::log(sum);
  if (dout != nullptr) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      (*dout)[i] = std::exp(out[i] - log_norm) - (static_cast<int>(i) == label ? 1.0 : 0.0);
    }
  }
  return log_norm - out[static_cast<std::size_t>(label)];
}

double MlpObjective::eval(const ParamStore& theta, std::span<const std::size_t> batch) const {
  if (batch.empty()) throw InvalidArgument("empty batch");
  const Weights w = weights(theta);
  double sum = 0.0;
  for (std::size_t i : batch) {
    const auto out = forward(w, i, nullptr);
    sum += example_loss(out, data_.labels[i], nullptr);
  }
  return sum / static_cast<double>(batch.size());
}

std::vector<double> MlpObjective::gradient(const ParamStore& theta, std::span<const std::size_t> batch) const {
  if (batch.empty()) throw InvalidArgument("empty batch");
  const Weights w = weights(theta);
  const std::size_t depth = w.layers.size();
  std::vector<std::vector<double>> dw(depth);
  std::vector<std::vector<double>> db(depth);
  for (std::size_t k = 0; k < depth; ++k) {
    dw[k].assign(w.layers[k].w.size(), 0.0);
    db[k].assign(w.layers[k].out, 0.0);
  }

  const double inv = 1.0 / static_cast<double>(batch.size());
  std::vector<std::vector<double>> acts;
  std::vector<double> delta;
  for (std::size_t i : batch) {
    const auto out = forward(w, i, &acts);
    example_loss(out, data_.labels[i], &delta);
    for (std::size_t k = depth; k-- > 0;) {
      const auto& layer = w.layers[k];
      const auto& input = acts[k];
      for (std::size_t r = 0; r < layer.out; ++r) {
        db[k][r] += inv * delta[r];
        for (std::size_t c = 0; c < layer.in; ++c) dw[k][r * layer.in + c] += inv * delta[r] * input[c];
      }
      if (k == 0) break;
      std::vector<double> prev(layer.in, 0.0);
      for (std::size_t r = 0; r < layer.out; ++r) {
        for (std::size_t c = 0; c < layer.in; ++c) prev[c] += layer.w[r * layer.in + c] * delta[r];
      }
      for (std::size_t c = 0; c < layer.in; ++c) prev[c] *= 1.0 - input[c] * input[c];
      delta = std::move(prev);
    }
  }

  std::vector<double> grad(theta.size(), 0.0);
  for (std::size_t k = 0; k < depth; ++k) {
    const auto& layer = w.layers[k];
    const std::string name = weight_name(k);
    const auto& wg = theta.group(name);
    std::copy(dw[k].begin(), dw[k].end(), grad.begin() + static_cast<std::ptrdiff_t>(wg.offset));
    const auto& bg = theta.group(bias_name(k));
    std::copy(db[k].begin(), db[k].end(), grad.begin() + static_cast<std::ptrdiff_t>(bg.offset));
    if (layer.adapter == nullptr) continue;

    const std::size_t rank = layer.adapter->rank;
    const double scale = layer.adapter->alpha / static_cast<double>(rank);
    const auto& ag = theta.group(name + ".lora_A");
    const auto& bgm = theta.group(name + ".lora_B");
    const auto a = theta.group_values(name + ".lora_A");
    const auto bm = theta.group_values(name + ".lora_B");
    for (std::size_t r = 0; r < layer.out; ++r) {
      for (std::size_t q = 0; q < rank; ++q) {
        double acc = 0.0;
        for (std::size_t c = 0; c < layer.in; ++c) acc += dw[k][r * layer.in + c] * bm[q * layer.in + c];
        grad[ag.offset + r * rank + q] = scale * acc;
      }
    }
    for (std::size_t q = 0; q < rank; ++q) {
      for (std::size_t c = 0; c < layer.in; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < layer.out; ++r) acc += a[r * rank + q] * dw[k][r * layer.in + c];
        grad[bgm.offset + q * layer.in + c] = scale * acc;
      }
    }
  }
  return grad;
}

int MlpObjective::predict(const ParamStore& theta, std::size_t example) const {
  const Weights w = weights(theta);
  const auto out = forward(w, example, nullptr);
  if (out.size() == 1) return out[0] >= 0.5 ? 1 : 0;
  return static_cast<int>(std::max_element(out.begin(), out.end()) - out.begin());
}

}  // namespace zoforge
