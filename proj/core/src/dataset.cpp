#include "zoforge/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "zoforge/errors.hpp"

namespace zoforge {

std::string_view to_string(DatasetKind kind) noexcept {
  switch (kind) {
    case DatasetKind::synthetic_linear: return "synthetic_linear";
    case DatasetKind::synthetic_blobs: return "synthetic_blobs";
    case DatasetKind::two_moons: return "two_moons";
  }
  return "unknown";
}

DatasetKind parse_dataset_kind(std::string_view text) {
  if (text == "synthetic_linear") return DatasetKind::synthetic_linear;
  if (text == "synthetic_blobs") return DatasetKind::synthetic_blobs;
  if (text == "two_moons") return DatasetKind::two_moons;
  throw InvalidArgument("unknown dataset kind '" + std::string(text) +
                        "' (expected synthetic_linear, synthetic_blobs or two_moons)");
}

namespace {

// Independent streams for the generator's own parameters and for the rows.
constexpr std::uint32_t kModelLane = 0;
constexpr std::uint32_t kRowLane = 1;

void make_linear(const DatasetSpec& spec, Dataset& out) {
  auto model = NoiseStream::gaussian(derive_step_seed(spec.seed, 0, kModelLane));
  std::vector<double> w(spec.features);
  double norm2 = 0.0;
  for (double& v : w) {
    v = model.next();
    norm2 += v * v;
  }
  const double norm = std::sqrt(norm2);
  auto rows = NoiseStream::gaussian(derive_step_seed(spec.seed, 0, kRowLane));
  for (std::size_t i = 0; i < spec.samples; ++i) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 100000) throw InvalidArgument("dataset margin too large to satisfy");
      double score = 0.0;
      for (std::size_t j = 0; j < spec.features; ++j) {
        const double v = rows.next();
        out.x[i * spec.features + j] = v;
        score += w[j] * v;
      }
      if (std::abs(score) / norm < spec.margin) continue;
      out.labels[i] = score >= 0.0 ? 1 : 0;
      break;
    }
  }
}

void make_blobs(const DatasetSpec& spec, Dataset& out) {
  auto model = NoiseStream::gaussian(derive_step_seed(spec.seed, 0, kModelLane));
  std::vector<double> centers(spec.classes * spec.features);
  for (double& c : centers) c = 3.0 * model.next();
  auto rows = NoiseStream::gaussian(derive_step_seed(spec.seed, 0, kRowLane));
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const std::size_t label = i % spec.classes;
    out.labels[i] = static_cast<int>(label);
    for (std::size_t j = 0; j < spec.features; ++j) {
      out.x[i * spec.features + j] = centers[label * spec.features + j] + rows.next();
    }
  }
}

void make_moons(const DatasetSpec& spec, Dataset& out) {
  Xoshiro256pp angle_rng(derive_step_seed(spec.seed, 0, kModelLane));
  auto rows = NoiseStream::gaussian(derive_step_seed(spec.seed, 0, kRowLane));
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const int label = static_cast<int>(i % 2);
    const double t = std::numbers::pi * angle_rng.uniform_open0();
    double a = std::cos(t);
    double b = std::sin(t);
    if (label == 1) {
      a = 1.0 - a;
      b = 0.5 - b;
    }
    out.labels[i] = label;
    out.x[2 * i] = a + 0.1 * rows.next();
    out.x[2 * i + 1] = b + 0.1 * rows.next();
  }
}

}  // namespace

Dataset make_dataset(const DatasetSpec& spec) {
  if (spec.samples == 0) throw InvalidArgument("dataset needs at least one sample");
  if (spec.features == 0) throw InvalidArgument("dataset needs at least one feature");
  if (spec.classes < 2) throw InvalidArgument("dataset needs at least two classes");
  if (spec.margin < 0.0) throw InvalidArgument("dataset margin must be non-negative");

  Dataset out;
  out.samples = spec.samples;
  out.features = spec.features;
  out.classes = spec.classes;
  out.x.assign(spec.samples * spec.features, 0.0);
  out.labels.assign(spec.samples, 0);

  switch (spec.kind) {
    case DatasetKind::synthetic_linear:
      if (spec.classes != 2) throw InvalidArgument("synthetic_linear datasets are binary");
      make_linear(spec, out);
      break;
    case DatasetKind::synthetic_blobs:
      make_blobs(spec, out);
      break;
    case DatasetKind::two_moons:
      if (spec.classes != 2 || spec.features != 2) {
        throw InvalidArgument("two_moons datasets have 2 classes and 2 features");
      }
      make_moons(spec, out);
      break;
  }
  return out;
}

void export_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  for (std::size_t j = 0; j < data.features; ++j) out << "feature_" << j << ',';
  out << "label\n";
  char buf[32];
  for (std::size_t i = 0; i < data.samples; ++i) {
    for (double v : data.row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << buf << ',';
    }
    out << data.labels[i] << '\n';
  }
}

}  // namespace zoforge
