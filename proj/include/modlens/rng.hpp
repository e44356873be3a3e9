#pragma once

#include <cmath>
#include <cstdint>

namespace modlens {

// Splitmix64; the only RNG used for data generation and weight init so
// outputs are stable across platforms and standard-library versions.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Uniform in [0, 1).
inline double rng_uniform(std::uint64_t& state) {
  return static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller, one value per call; u1 kept away from 0.
inline double rng_normal(std::uint64_t& state) {
  const double u1 = 1.0 - rng_uniform(state);
  const double u2 = rng_uniform(state);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace modlens
