#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "zoforge/random.hpp"

namespace zoforge {

struct GroupDesc {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
  bool trainable = true;
  // Shape of a linear-map weight (rows x cols == length). Zero for vectors.
  std::size_t rows = 0;
  std::size_t cols = 0;

  bool is_matrix() const noexcept { return rows != 0 && cols != 0 && rows * cols == length; }
};

/// Low-rank adapter on a linear-map group: W_eff = W + (alpha / rank) * A * B.
struct AdapterSpec {
  std::string target_group;
  std::size_t rank = 1;
  double alpha = 1.0;
  Seed init_seed{0xADA97E5ULL};
};

enum class StoragePrecision : std::uint8_t { f64, f32 };

/// One flag per group, in group order.
using GroupMask = std::vector<bool>;

/// Flat parameter vector partitioned into named, contiguous groups.
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(std::vector<GroupDesc> groups,
                      StoragePrecision precision = StoragePrecision::f64);
  ParamStore(std::vector<GroupDesc> groups, std::vector<double> values,
             StoragePrecision precision = StoragePrecision::f64);

  std::size_t size() const noexcept { return values_.size(); }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  const std::vector<GroupDesc>& groups() const noexcept { return groups_; }
  std::optional<std::size_t> find_group(std::string_view name) const noexcept;
  /// Index of a group; throws InvalidArgument when absent.
  std::size_t group_index(std::string_view name) const;
  const GroupDesc& group(std::string_view name) const { return groups_[group_index(name)]; }
  std::span<double> group_values(std::string_view name);
  std::span<const double> group_values(std::string_view name) const;

  void set_trainable(std::string_view name, bool trainable);
  GroupMask trainable_mask() const;
  void apply_mask(const GroupMask& mask);
  std::size_t masked_count(const GroupMask& mask) const;
  std::size_t trainable_count() const { return masked_count(trainable_mask()); }

  const std::vector<AdapterSpec>& adapters() const noexcept { return adapters_; }
  const AdapterSpec* adapter_for(std::string_view target) const noexcept;

  StoragePrecision precision() const noexcept { return precision_; }
  /// Rounds a value through the storage precision.
  double stored(double v) const noexcept {
    return precision_ == StoragePrecision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
  }

  /// FNV-1a over (name, offset, length) of every group, in order.
  std::uint64_t layout_hash() const;

 private:
  friend ParamStore attach_low_rank_adapter(const ParamStore&, const AdapterSpec&);
  friend ParamStore with_storage(const ParamStore&, StoragePrecision);
  friend ParamStore import_params(const std::filesystem::path&, const std::filesystem::path&);
  void validate() const;

  std::vector<GroupDesc> groups_;
  std::vector<double> values_;
  std::vector<AdapterSpec> adapters_;
  StoragePrecision precision_ = StoragePrecision::f64;
};

struct NoiseSpec {
  Seed seed;
  ZDist dist = ZDist::gaussian;
};

/// theta_i += coeff * scale[g] * z_i for every entry of a masked-in group,
/// where z is `noise` consumed in group order. An empty `group_scale` means
/// all ones. Masked-out entries are untouched.
void add_scaled_noise(ParamStore& store, const NoiseSpec& noise, double coeff, const GroupMask& mask,
                      std::span<const double> group_scale = {});

/// In-place perturbation step of the seed-replay loop.
inline void perturb_in_place(ParamStore& store, double epsilon, const NoiseSpec& noise,
                             const GroupMask& mask) {
  add_scaled_noise(store, noise, epsilon, mask);
}
inline void perturb_in_place(ParamStore& store, double epsilon, const NoiseSpec& noise) {
  add_scaled_noise(store, noise, epsilon, store.trainable_mask());
}

/// theta_i += coeff * z_i. The caller passes coeff = -lr * projected_grad.
inline void apply_projected_grad(ParamStore& store, const NoiseSpec& noise, double coeff,
                                 const GroupMask& mask) {
  add_scaled_noise(store, noise, coeff, mask);
}
inline void apply_projected_grad(ParamStore& store, const NoiseSpec& noise, double coeff) {
  add_scaled_noise(store, noise, coeff, store.trainable_mask());
}

/// The d-length z that `add_scaled_noise` would consume, zero outside the
/// mask. For tests and Monte Carlo harnesses; the training path never
/// materializes it.
std::vector<double> materialize_noise(const ParamStore& store, const NoiseSpec& noise,
                                      const GroupMask& mask);

/// Appends `<target>.lora_A` (m x r, Gaussian / sqrt(r)) and
/// `<target>.lora_B` (r x n, zeros), marks both trainable and freezes the
/// target.
ParamStore attach_low_rank_adapter(const ParamStore& store, const AdapterSpec& spec);

/// Copy with another storage precision; values are rounded through it.
ParamStore with_storage(const ParamStore& store, StoragePrecision precision);

/// W + (alpha / r) A B when an adapter targets `group`, else a copy of W.
std::vector<double> effective_weight(const ParamStore& store, std::string_view group);

/// Raw little-endian f64 array plus a JSON sidecar describing the groups.
void export_params(const ParamStore& store, const std::filesystem::path& bin_path,
                   const std::filesystem::path& json_path);
ParamStore import_params(const std::filesystem::path& bin_path, const std::filesystem::path& json_path);

/// Conventional sidecar path: `<params>.json`.
std::filesystem::path sidecar_path(const std::filesystem::path& bin_path);

}  // namespace zoforge
