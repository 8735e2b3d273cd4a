#include "zoforge/random.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <string>
#include <utility>

#include "zoforge/errors.hpp"

namespace zoforge {

double Xoshiro256pp::uniform_open0() noexcept {
  for (;;) {
    const double u = static_cast<double>((*this)() >> 11) * 0x1.0p-53;
    if (u != 0.0) return u;
  }
}

std::uint64_t Xoshiro256pp::bounded(std::uint64_t bound) noexcept {
  // Reject the low partial bucket so every residue is equally likely.
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t x = (*this)();
    if (x >= threshold) return x % bound;
  }
}

NoiseStream::NoiseStream(Seed seed, ZDist dist, std::size_t dim)
    : seed_(seed), dist_(dist), dim_(dim), rng_(seed) {
  if (dist_ == ZDist::sphere) {
    if (dim_ == 0) throw InvalidArgument("sphere noise requires dimension >= 1");
    double sumsq = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      const double g = next_gaussian();
      sumsq += g * g;
    }
    root_dim_ = std::sqrt(static_cast<double>(dim_));
    norm_ = std::sqrt(sumsq);
    rng_ = Xoshiro256pp(seed);
    has_spare_ = false;
  }
}

NoiseStream NoiseStream::gaussian(Seed seed) { return NoiseStream(seed, ZDist::gaussian, 0); }

NoiseStream NoiseStream::sphere(Seed seed, std::size_t dim) {
  return NoiseStream(seed, ZDist::sphere, dim);
}

NoiseStream NoiseStream::make(Seed seed, ZDist dist, std::size_t dim) {
  return NoiseStream(seed, dist, dist == ZDist::gaussian ? 0 : dim);
}

double NoiseStream::next_gaussian() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = rng_.uniform_open0();
  const double u2 = rng_.uniform_open0();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

double NoiseStream::next() {
  if (dist_ == ZDist::sphere && cursor_ >= dim_) {
    throw InvalidArgument("sphere stream exhausted after " + std::to_string(dim_) + " scalars");
  }
  ++cursor_;
  return next_gaussian() * root_dim_ / norm_;
}

void NoiseStream::fill(std::span<double> out) {
  for (double& v : out) v = next();
}

std::vector<double> sample_sphere(Seed seed, std::size_t dim) {
  if (dim == 0) throw InvalidArgument("sample_sphere: dimension must be >= 1");
  std::vector<double> z(dim);
  NoiseStream::sphere(seed, dim).fill(z);
  return z;
}

std::vector<std::size_t> sample_minibatch(Seed seed, std::size_t dataset_size, std::size_t batch_size) {
  if (batch_size == 0 || batch_size > dataset_size) {
    throw InvalidArgument("sample_minibatch: batch size " + std::to_string(batch_size) +
                          " not in [1, " + std::to_string(dataset_size) + "]");
  }
  std::vector<std::size_t> idx(dataset_size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Xoshiro256pp rng(seed);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.bounded(dataset_size - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(batch_size);
  return idx;
}

}  // namespace zoforge
