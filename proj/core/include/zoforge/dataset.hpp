#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "zoforge/random.hpp"

namespace zoforge {

enum class DatasetKind : std::uint8_t { synthetic_linear, synthetic_blobs, two_moons };

std::string_view to_string(DatasetKind kind) noexcept;
/// Accepts "synthetic_linear", "synthetic_blobs" or "two_moons".
DatasetKind parse_dataset_kind(std::string_view text);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::synthetic_linear;
  std::size_t samples = 200;
  std::size_t features = 2;
  std::size_t classes = 2;
  Seed seed{1};
  /// synthetic_linear only: examples closer than this to the separating
  /// hyperplane are redrawn.
  double margin = 0.0;
};

/// Row-major feature matrix with integer class labels in [0, classes).
struct Dataset {
  std::size_t samples = 0;
  std::size_t features = 0;
  std::size_t classes = 0;
  std::vector<double> x;
  std::vector<int> labels;

  std::span<const double> row(std::size_t i) const { return std::span<const double>(x).subspan(i * features, features); }
};

/// Regenerates the same dataset bitwise for equal specs.
///
/// synthetic_linear draws x ~ N(0, I) and labels it by the sign of a random
/// hyperplane through the origin. synthetic_blobs places one unit-variance
/// Gaussian cluster per class around centers drawn with scale 3.
/// two_moons is the two interleaved half circles in 2-D with noise 0.1.
Dataset make_dataset(const DatasetSpec& spec);

/// Writes `feature_0,...,feature_k,label` followed by one row per example.
void export_dataset_csv(const Dataset& data, const std::filesystem::path& path);

}  // namespace zoforge
