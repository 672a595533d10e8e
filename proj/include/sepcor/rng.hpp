#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace sepcor::rng {

// Counter-based pseudo-random generator (Philox 4x32-10). Every draw is a
// pure function of (seed, stream, row, block), so replicate j / observation i
// always sees the same values no matter how work is scheduled across threads.

inline constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
inline constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
inline constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t{kPhiloxM0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kPhiloxM1} * ctr[2];
    ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
           static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
           static_cast<std::uint32_t>(p0)};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

/// Derives an independent seed from (seed, salt); splitmix64 finalizer.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace detail {

inline double u64_to_open_closed(std::uint64_t z) {
  // (0, 1]: avoids log(0) in the Box-Muller radius.
  return static_cast<double>((z >> 11) + 1) * 0x1.0p-53;
}

inline double u64_to_closed_open(std::uint64_t z) {
  // [0, 1)
  return static_cast<double>(z >> 11) * 0x1.0p-53;
}

}  // namespace detail

/// Fills `out` with i.i.d. standard normal draws addressed by
/// (seed, stream, row). Each Philox block yields one Box-Muller pair.
inline void fill_normal(std::uint64_t seed, std::uint64_t stream,
                        std::uint32_t row, std::span<double> out) {
  const std::array<std::uint32_t, 2> key = {
      static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  const std::uint32_t stream_lo = static_cast<std::uint32_t>(stream);
  const std::uint32_t stream_hi = static_cast<std::uint32_t>(stream >> 32);
  std::size_t pos = 0;
  std::uint32_t block = 0;
  while (pos < out.size()) {
    const auto words = philox4x32({stream_lo, stream_hi, row, block}, key);
    const std::uint64_t z0 =
        (std::uint64_t{words[0]} << 32) | std::uint64_t{words[1]};
    const std::uint64_t z1 =
        (std::uint64_t{words[2]} << 32) | std::uint64_t{words[3]};
    const double radius = std::sqrt(-2.0 * std::log(detail::u64_to_open_closed(z0)));
    const double angle = 2.0 * std::numbers::pi * detail::u64_to_closed_open(z1);
    out[pos++] = radius * std::cos(angle);
    if (pos < out.size()) out[pos++] = radius * std::sin(angle);
    ++block;
  }
}

/// Single uniform double in [0, 1) addressed by (seed, stream, row, block).
inline double uniform(std::uint64_t seed, std::uint64_t stream,
                      std::uint32_t row, std::uint32_t block = 0) {
  const std::array<std::uint32_t, 2> key = {
      static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  const auto words = philox4x32({static_cast<std::uint32_t>(stream),
                                 static_cast<std::uint32_t>(stream >> 32), row,
                                 block},
                                key);
  return detail::u64_to_closed_open((std::uint64_t{words[0]} << 32) |
                                    std::uint64_t{words[1]});
}

}  // namespace sepcor::rng
