#pragma once

// Deterministic random streams. Everything here is a pure function of a
// 64-bit seed so that any step of a run can be regenerated on its own.

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace zoforge {

struct Seed {
  std::uint64_t value = 0;

  friend constexpr bool operator==(Seed, Seed) = default;
};

/// Perturbation distribution. The numeric values are part of the trajectory
/// file format.
enum class ZDist : std::uint8_t { gaussian = 0, sphere = 1 };

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

/// Lanes keep independent consumers of one master seed apart.
inline constexpr std::uint32_t kNoiseLane = 0;
inline constexpr std::uint32_t kBatchLane = 1;

/// Noise lane of the j-th probe of an n-SPSA step. Probe 0 uses kNoiseLane.
constexpr std::uint32_t noise_lane(std::size_t probe) noexcept {
  return static_cast<std::uint32_t>(2 * probe);
}

/// The splitmix64 output finalizer.
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Seed for (step, lane) of a run. A pure hash: step t never depends on
/// generator state left behind by steps < t.
constexpr Seed derive_step_seed(Seed master, std::uint64_t step, std::uint32_t lane) noexcept {
  return Seed{splitmix64_mix(master.value ^ ((step + 1) * kGoldenGamma + lane))};
}

/// xoshiro256++ seeded by splitmix64 expansion.
class Xoshiro256pp {
 public:
  using result_type = std::uint64_t;

  explicit constexpr Xoshiro256pp(Seed seed) noexcept {
    std::uint64_t x = seed.value;
    for (auto& word : state_) {
      x += kGoldenGamma;
      word = splitmix64_mix(x);
    }
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }

  constexpr result_type operator()() noexcept {
    const std::uint64_t result = std::rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = std::rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in (0, 1): 53-bit mantissa, zero rejected.
  double uniform_open0() noexcept;

  /// Unbiased integer in [0, bound). bound must be > 0.
  std::uint64_t bounded(std::uint64_t bound) noexcept;

 private:
  std::array<std::uint64_t, 4> state_{};
};

/// Replayable stream of perturbation scalars.
///
/// Gaussian mode emits Box-Muller pairs (cosine member first). Sphere mode
/// emits the coordinates of a vector of dimension `dim` rescaled to norm
/// sqrt(dim); the normalizer is found by a pre-pass over the same stream,
/// so no d-length buffer is ever held.
class NoiseStream {
 public:
  static NoiseStream gaussian(Seed seed);
  static NoiseStream sphere(Seed seed, std::size_t dim);
  static NoiseStream make(Seed seed, ZDist dist, std::size_t dim);

  double next();
  void fill(std::span<double> out);

  Seed seed() const noexcept { return seed_; }
  ZDist dist() const noexcept { return dist_; }
  std::uint64_t cursor() const noexcept { return cursor_; }

 private:
  NoiseStream(Seed seed, ZDist dist, std::size_t dim);
  double next_gaussian() noexcept;

  Seed seed_;
  ZDist dist_;
  std::size_t dim_;
  Xoshiro256pp rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
  // Sphere draws are g * sqrt(dim) / ||g||, which is exactly +-1 for dim 1.
  double root_dim_ = 1.0;
  double norm_ = 1.0;
  std::uint64_t cursor_ = 0;
};

/// One standard normal draw from `stream` (gaussian mode).
inline double next_standard_normal(NoiseStream& stream) { return stream.next(); }

/// d Gaussians rescaled to norm sqrt(d). Throws InvalidArgument for d = 0.
std::vector<double> sample_sphere(Seed seed, std::size_t dim);

/// B distinct indices from [0, dataset_size), uniform without replacement
/// (partial Fisher-Yates). Throws InvalidArgument unless 1 <= B <= N.
std::vector<std::size_t> sample_minibatch(Seed seed, std::size_t dataset_size, std::size_t batch_size);

}  // namespace zoforge
