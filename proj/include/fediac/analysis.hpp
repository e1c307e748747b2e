#pragma once

// Closed-form pipeline behind the protocol's parameter choices: rank sampling
// probabilities, vote/upload probabilities, the compression error bound, the
// bit-width lower bound, and the threshold search run by the server during
// the bootstrap iteration.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "fediac/compression.hpp"

namespace fediac {

// Magnitude model for rank-ordered updates: |U{l}| <= phi * l^alpha.
struct PowerLawFit {
  double alpha = -1.0;  // decay exponent, always < 0
  double phi = 1.0;     // scale, always > 0
};

// Ordinary least squares of log|U{l}| against log l. Trailing zeros are
// trimmed; the slope is clamped below -1e-6 so downstream sums stay finite.
inline PowerLawFit fit_power_law(const std::vector<double>& sorted_magnitudes) {
  std::size_t n = sorted_magnitudes.size();
  while (n > 0 && !(sorted_magnitudes[n - 1] > 0.0)) --n;
  if (n < 2)
    throw std::invalid_argument(
        "power-law fit needs at least 2 positive magnitudes");
  for (std::size_t l = 1; l < n; ++l)
    if (sorted_magnitudes[l] > sorted_magnitudes[l - 1])
      throw std::invalid_argument("magnitudes must be sorted descending");

  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t l = 0; l < n; ++l) {
    const double x = std::log(static_cast<double>(l + 1));
    const double y = std::log(sorted_magnitudes[l]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double dn = static_cast<double>(n);
  const double slope = (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
  const double intercept = (sy - slope * sx) / dn;
  PowerLawFit fit;
  fit.alpha = std::min(slope, -1e-6);
  fit.phi = std::exp(intercept);
  return fit;
}

// p_l: probability that one draw picks the rank-l magnitude. phi cancels.
inline double sample_prob(int l, const PowerLawFit& fit, int d) {
  if (l < 1 || l > d) throw std::invalid_argument("rank out of range");
  double denom = 0.0;
  for (int j = 1; j <= d; ++j)
    denom += std::pow(static_cast<double>(j), fit.alpha);
  return std::pow(static_cast<double>(l), fit.alpha) / denom;
}

// q = 1 - (1-p)^k: probability that at least one of k draws picks the index.
inline double vote_prob(double p, int k) {
  if (k < 1) throw std::invalid_argument("draw count must be >= 1");
  if (p <= 0.0) return 0.0;
  if (p >= 1.0) return 1.0;
  return -std::expm1(static_cast<double>(k) * std::log1p(-p));
}

// Binomial upper tail: probability that at least a of N clients vote, given
// each votes independently with probability q. Accumulated in log space so
// N up to ~10^3 stays stable.
inline double upload_prob(double q, int N, int a) {
  if (a < 1 || a > N)
    throw std::invalid_argument("threshold must be in [1, N], got " +
                                std::to_string(a));
  if (q <= 0.0) return 0.0;
  if (q >= 1.0) return 1.0;
  const double lq = std::log(q);
  const double l1q = std::log1p(-q);
  const double lgn = std::lgamma(static_cast<double>(N) + 1.0);
  double sum = 0.0;
  for (int j = a; j <= N; ++j) {
    const double lc = lgn - std::lgamma(static_cast<double>(j) + 1.0) -
                      std::lgamma(static_cast<double>(N - j) + 1.0);
    sum += std::exp(lc + j * lq + (N - j) * l1q);
  }
  return std::min(sum, 1.0);
}

// r_l for every rank l = 1..d.
inline std::vector<double> upload_probs(int d, int k, int N, int a,
                                        const PowerLawFit& fit) {
  if (d < 1) throw std::invalid_argument("dimension must be >= 1");
  double denom = 0.0;
  for (int j = 1; j <= d; ++j)
    denom += std::pow(static_cast<double>(j), fit.alpha);
  std::vector<double> r(static_cast<std::size_t>(d));
  for (int l = 1; l <= d; ++l) {
    const double p = std::pow(static_cast<double>(l), fit.alpha) / denom;
    r[static_cast<std::size_t>(l - 1)] = upload_prob(vote_prob(p, k), N, a);
  }
  return r;
}

// Everything the bound formulas consume.
struct BoundInputs {
  int d = 0;  // dimension
  int k = 0;  // draws per client
  int N = 0;  // clients
  int a = 1;  // vote threshold, in [1, N]
  PowerLawFit fit;
  QuantConfig cfg;

  void validate() const {
    if (d < 1) throw std::invalid_argument("dimension must be >= 1");
    if (k < 1) throw std::invalid_argument("draw count must be >= 1");
    if (N < 1) throw std::invalid_argument("client count must be >= 1");
    if (a < 1 || a > N)
      throw std::invalid_argument("threshold must be in [1, N]");
  }
};

// E[k_S] = sum of r_l: expected number of uploaded coordinates.
inline double expected_uploads(const BoundInputs& in) {
  in.validate();
  const std::vector<double> r = upload_probs(in.d, in.k, in.N, in.a, in.fit);
  double sum = 0.0;
  for (double x : r) sum += x;
  return sum;
}

// Relative expected squared error of the sparsify-then-quantize pipeline:
//   gamma = 1 - (sum r_l l^2a)/(sum l^2a) + (1/4f^2) (sum r_l)/(phi^2 sum l^2a)
// Convergence needs 0 < gamma < 1; callers check before trusting it.
inline double gamma_from_probs(const std::vector<double>& r,
                               const PowerLawFit& fit, double scale) {
  if (r.empty()) throw std::invalid_argument("empty upload probabilities");
  if (!(scale > 0.0))
    throw std::invalid_argument("quantization scale must be positive");
  double s_w = 0.0, s_rw = 0.0, s_r = 0.0;
  for (std::size_t l = 1; l <= r.size(); ++l) {
    const double w = std::pow(static_cast<double>(l), 2.0 * fit.alpha);
    s_w += w;
    s_rw += r[l - 1] * w;
    s_r += r[l - 1];
  }
  return 1.0 - s_rw / s_w +
         s_r / (4.0 * scale * scale * fit.phi * fit.phi * s_w);
}

inline double gamma_bound(const BoundInputs& in) {
  in.validate();
  return gamma_from_probs(upload_probs(in.d, in.k, in.N, in.a, in.fit),
                          in.fit, in.cfg.scale);
}

// Smallest integer b strictly above
//   log2( sqrt(sum r_l) / (2 phi sqrt(sum r_l l^2a)) * N m + N ) + 1,
// the bit width below which the error bound leaves (0, 1).
inline int min_bits_from_probs(const std::vector<double>& r,
                               const PowerLawFit& fit, int N, double max_mag) {
  if (!(max_mag > 0.0))
    throw std::invalid_argument("max magnitude must be positive");
  double s_r = 0.0, s_rw = 0.0;
  for (std::size_t l = 1; l <= r.size(); ++l) {
    s_r += r[l - 1];
    s_rw += r[l - 1] * std::pow(static_cast<double>(l), 2.0 * fit.alpha);
  }
  if (!(s_rw > 0.0))
    throw std::invalid_argument(
        "upload probabilities vanish; no feasible bit width");
  const double ratio = std::sqrt(s_r) / (2.0 * fit.phi * std::sqrt(s_rw));
  const double threshold =
      std::log2(ratio * static_cast<double>(N) * max_mag +
                static_cast<double>(N)) +
      1.0;
  return static_cast<int>(std::floor(threshold)) + 1;
}

inline int min_bits(int d, int k, int N, int a, const PowerLawFit& fit,
                    double max_mag) {
  return min_bits_from_probs(upload_probs(d, k, N, a, fit), fit, N, max_mag);
}

struct TuneResult {
  int a = 0;
  int bits = 0;
  double gamma = 0.0;
  double expected_uploads = 0.0;
};

// Evaluates every candidate threshold with its matching minimum bit width and
// returns the feasible pair (0 < gamma < 1) of smallest gamma whose expected
// upload fraction fits the traffic budget; if no candidate fits the budget,
// falls back to the smallest-gamma feasible pair.
inline TuneResult tune_a(const std::vector<int>& candidate_as, int d, int k,
                         int N, const PowerLawFit& fit, double max_mag,
                         double traffic_budget) {
  if (candidate_as.empty())
    throw std::invalid_argument("no candidate thresholds supplied");
  bool have_any = false, have_budget = false;
  TuneResult best_any, best_budget;
  for (int a : candidate_as) {
    if (a < 1 || a > N) continue;
    TuneResult cur;
    cur.a = a;
    try {
      cur.bits = min_bits(d, k, N, a, fit, max_mag);
      BoundInputs in{d, k, N, a, fit, make_quant_config(cur.bits, N, max_mag)};
      cur.gamma = gamma_bound(in);
      cur.expected_uploads = expected_uploads(in);
    } catch (const std::invalid_argument&) {
      continue;  // e.g. required bits exceed 32
    }
    if (!(cur.gamma > 0.0 && cur.gamma < 1.0)) continue;
    if (!have_any || cur.gamma < best_any.gamma) {
      best_any = cur;
      have_any = true;
    }
    if (cur.expected_uploads / static_cast<double>(d) <= traffic_budget &&
        (!have_budget || cur.gamma < best_budget.gamma)) {
      best_budget = cur;
      have_budget = true;
    }
  }
  if (!have_any)
    throw std::runtime_error(
        "no candidate threshold yields 0 < gamma < 1; increase the bit "
        "budget or lower the threshold");
  return have_budget ? best_budget : best_any;
}

}  // namespace fediac
