#pragma once

// Client-side codec: magnitude-proportional voting, unbiased integer
// quantization, mask-based sparsification and residual error feedback.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fediac/rng.hpp"

namespace fediac {

// Dense per-client accumulated model update, fixed index order 0..d-1.
using UpdateVector = std::vector<double>;

// Per-client un-transmitted update mass, re-added before the next round.
using Residual = std::vector<double>;

// One bit per dimension. Doubles as a client vote array and as the global
// index array broadcast by the switch.
struct VoteArray {
  std::vector<std::uint8_t> bits;

  VoteArray() = default;
  explicit VoteArray(std::size_t d) : bits(d, 0) {}

  std::size_t size() const { return bits.size(); }

  std::size_t popcount() const {
    return static_cast<std::size_t>(
        std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }

  bool operator==(const VoteArray& other) const { return bits == other.bits; }
};

// (b, N, m, f) bundle. scale = (2^(b-1) - N) / (N m) guarantees that the sum
// of N independently quantized values never leaves the signed b-bit range.
struct QuantConfig {
  int bits = 0;         // b
  int clients = 0;      // N
  double max_mag = 0;   // m, max |update| across the vectors being quantized
  double scale = 0;     // f
};

inline QuantConfig make_quant_config(int bits, int clients, double max_mag) {
  if (bits < 2 || bits > 32)
    throw std::invalid_argument("quantization bits must be in [2, 32], got " +
                                std::to_string(bits));
  if (clients < 1)
    throw std::invalid_argument("client count must be >= 1, got " +
                                std::to_string(clients));
  if (!(max_mag > 0.0))
    throw std::invalid_argument(
        "max update magnitude must be positive; all-zero vectors must be "
        "handled upstream");
  const double half_range = std::ldexp(1.0, bits - 1);  // 2^(b-1)
  if (half_range <= static_cast<double>(clients))
    throw std::invalid_argument(
        "2^(b-1) must exceed the client count (b=" + std::to_string(bits) +
        ", N=" + std::to_string(clients) + ")");
  QuantConfig cfg;
  cfg.bits = bits;
  cfg.clients = clients;
  cfg.max_mag = max_mag;
  cfg.scale = (half_range - static_cast<double>(clients)) /
              (static_cast<double>(clients) * max_mag);
  return cfg;
}

// Randomized floor/ceil rounding whose expectation equals x. Integers pass
// through unchanged.
inline std::int64_t quantize_value(double x, Rng& rng) {
  const double lo = std::floor(x);
  const double frac = x - lo;
  if (frac == 0.0) return static_cast<std::int64_t>(lo);
  return static_cast<std::int64_t>(uniform01(rng) < frac ? lo + 1.0 : lo);
}

// k independent draws with index odds proportional to |u_l|; duplicate draws
// collapse into one set bit, so popcount is in [1, k].
inline VoteArray vote(const UpdateVector& u, int k, Rng& rng) {
  if (k < 1)
    throw std::invalid_argument("vote draw count must be >= 1, got " +
                                std::to_string(k));
  std::vector<double> cum(u.size());
  double total = 0.0;
  for (std::size_t l = 0; l < u.size(); ++l) {
    total += std::abs(u[l]);
    cum[l] = total;
  }
  if (!(total > 0.0))
    throw std::invalid_argument("cannot vote on an all-zero update vector");

  VoteArray v(u.size());
  for (int j = 0; j < k; ++j) {
    const double x = uniform01(rng) * total;
    std::size_t idx = static_cast<std::size_t>(
        std::upper_bound(cum.begin(), cum.end(), x) - cum.begin());
    if (idx >= u.size()) idx = u.size() - 1;
    while (idx > 0 && std::abs(u[idx]) == 0.0) --idx;  // rounding at the edge
    v.bits[idx] = 1;
  }
  return v;
}

struct SparseEntry {
  std::uint32_t index = 0;
  std::int32_t value = 0;

  bool operator==(const SparseEntry& other) const {
    return index == other.index && value == other.value;
  }
};

// (index, integer) pairs in ascending index order.
using SparseUpdate = std::vector<SparseEntry>;

// Quantizes exactly the coordinates selected by the mask; one entry per set
// bit, including zeros, so every client emits the same index layout.
inline SparseUpdate compress(const UpdateVector& u, const VoteArray& mask,
                             const QuantConfig& cfg, Rng& rng) {
  if (mask.size() != u.size())
    throw std::invalid_argument("mask dimension mismatch");
  SparseUpdate out;
  out.reserve(mask.popcount());
  for (std::size_t l = 0; l < u.size(); ++l) {
    if (!mask.bits[l]) continue;
    if (std::abs(u[l]) > cfg.max_mag * (1.0 + 1e-12))
      throw std::invalid_argument("update magnitude exceeds configured max");
    out.push_back({static_cast<std::uint32_t>(l),
                   static_cast<std::int32_t>(
                       quantize_value(cfg.scale * u[l], rng))});
  }
  return out;
}

// e = (1/f)(fU - uploaded): masked-out coordinates keep their full value,
// uploaded ones keep only the quantization remainder (|e_l| <= 1/f).
inline Residual residual_update(const UpdateVector& u,
                                const SparseUpdate& uploaded,
                                const QuantConfig& cfg) {
  Residual e(u.begin(), u.end());
  for (const SparseEntry& s : uploaded)
    e[s.index] = u[s.index] - static_cast<double>(s.value) / cfg.scale;
  return e;
}

}  // namespace fediac
