#include <algorithm>
#include <set>

#include "zoforge/errors.hpp"
#include "zoforge/objectives.hpp"

namespace zoforge {

std::string_view to_string(Metric metric) noexcept {
  return metric == Metric::accuracy ? "accuracy" : "macro_f1";
}

Metric parse_metric(std::string_view text) {
  if (text == "accuracy") return Metric::accuracy;
  if (text == "macro_f1") return Metric::macro_f1;
  throw InvalidArgument("unknown metric '" + std::string(text) + "' (expected accuracy or macro_f1)");
}

double macro_f1(std::span<const int> labels, std::span<const int> predictions) {
  if (labels.size() != predictions.size()) throw InvalidArgument("label and prediction counts differ");
  if (labels.empty()) throw InvalidArgument("empty batch");
  std::set<int> classes(labels.begin(), labels.end());
  classes.insert(predictions.begin(), predictions.end());
  double total = 0.0;
  for (int c : classes) {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool actual = labels[i] == c;
      const bool predicted = predictions[i] == c;
      if (actual && predicted) ++tp;
      if (!actual && predicted) ++fp;
      if (actual && !predicted) ++fn;
    }
    const std::size_t denom = 2 * tp + fp + fn;
    total += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  return total / static_cast<double>(classes.size());
}

double MetricObjective::eval(const ParamStore& theta, std::span<const std::size_t> batch) const {
  if (batch.empty()) throw InvalidArgument("empty batch");
  const auto& labels = model_.data().labels;
  if (metric_ == Metric::accuracy) {
    std::size_t correct = 0;
    for (std::size_t i : batch) correct += model_.predict(theta, i) == labels[i] ? 1 : 0;
    return -static_cast<double>(correct) / static_cast<double>(batch.size());
  }
  std::vector<int> truth;
  std::vector<int> predicted;
  truth.reserve(batch.size());
  predicted.reserve(batch.size());
  for (std::size_t i : batch) {
    truth.push_back(labels[i]);
    predicted.push_back(model_.predict(theta, i));
  }
  return -macro_f1(truth, predicted);
}

}  // namespace zoforge
