#pragma once

// Seeded random streams and the samplers used across the simulator. Every
// stochastic component takes an explicit generator so runs are reproducible
// and independent streams can be derived per (seed, role, id).

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>

namespace fediac {

using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace detail

// Hashes (seed, tags...) into a 64-bit stream id. Streams with different
// tags are statistically independent of each other.
inline std::uint64_t stream_id(std::uint64_t seed,
                               std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = seed ^ 0xa0761d6478bd642full;
  std::uint64_t h = detail::splitmix64(s);
  for (std::uint64_t t : tags) {
    s ^= t * 0xe7037ed1a0b428dbull + (h << 6) + (h >> 2);
    h ^= detail::splitmix64(s);
  }
  return h;
}

inline Rng make_rng(std::uint64_t seed,
                    std::initializer_list<std::uint64_t> tags = {}) {
  return Rng(stream_id(seed, tags));
}

// Uniform in [0, 1).
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_range(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Exponential with the given rate (mean 1/rate).
inline double exponential(Rng& rng, double rate) {
  return -std::log1p(-uniform01(rng)) / rate;
}

// Box-Muller, cosine branch only: exactly two generator steps per draw.
inline double normal(Rng& rng, double mean, double stddev) {
  double u1;
  do {
    u1 = uniform01(rng);
  } while (u1 == 0.0);
  const double u2 = uniform01(rng);
  const double z =
      std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  return mean + stddev * z;
}

// Marsaglia-Tsang; the shape < 1 case is boosted through shape + 1.
inline double gamma_sample(Rng& rng, double shape) {
  if (shape < 1.0) {
    double u;
    do {
      u = uniform01(rng);
    } while (u == 0.0);
    return gamma_sample(rng, shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    const double x = normal(rng, 0.0, 1.0);
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    double u;
    do {
      u = uniform01(rng);
    } while (u == 0.0);
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
  }
}

}  // namespace fediac
