#pragma once

#include <cstdint>
#include <random>

namespace lrvoter {

using Rng = std::mt19937_64;

// Independent stream for replicate `index` of an experiment seeded with `seed`.
// Streams depend only on (seed, index), never on worker count or scheduling.
inline Rng replicate_stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    0x6c72766fu};
  return Rng(seq);
}

// Uniform on (0, 1] from the low 53 bits of a raw draw.
inline double unit_interval_open_closed(std::uint64_t bits) {
  constexpr std::uint64_t mask = (std::uint64_t{1} << 53) - 1;
  return static_cast<double>((bits & mask) + 1) * 0x1.0p-53;
}

} // namespace lrvoter
