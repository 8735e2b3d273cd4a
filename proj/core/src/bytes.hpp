#pragma once

// Little-endian byte helpers shared by the binary writers.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace zoforge::detail {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  put_le(out, std::bit_cast<std::uint64_t>(v));
}

template <typename U>
U get_le(std::span<const std::uint8_t> in, std::size_t offset) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<U>(in[offset + i]) << (8 * i));
  }
  return value;
}

inline double get_f64(std::span<const std::uint8_t> in, std::size_t offset) {
  return std::bit_cast<double>(get_le<std::uint64_t>(in, offset));
}

inline constexpr std::uint64_t kFnvOffset = 0xCBF29CE484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001B3ULL;

inline std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h = kFnvOffset) {
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= kFnvPrime;
  }
  return h;
}

}  // namespace zoforge::detail
