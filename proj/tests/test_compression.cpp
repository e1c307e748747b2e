#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "fediac/analysis.hpp"
#include "fediac/compression.hpp"
#include "fediac/rng.hpp"

using namespace fediac;

TEST_CASE("quant config computes the scale factor", "[compression]") {
  CHECK(make_quant_config(12, 20, 1.0).scale == Catch::Approx(101.4));
  CHECK(make_quant_config(3, 2, 0.5).scale == Catch::Approx(2.0));
  const QuantConfig cfg = make_quant_config(12, 20, 1.0);
  CHECK(cfg.bits == 12);
  CHECK(cfg.clients == 20);
  CHECK(cfg.max_mag == 1.0);
}

TEST_CASE("quant config rejects degenerate inputs", "[compression]") {
  CHECK_THROWS_AS(make_quant_config(5, 20, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(make_quant_config(1, 1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(make_quant_config(33, 1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(make_quant_config(12, 0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(make_quant_config(12, 20, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(make_quant_config(12, 20, -1.0), std::invalid_argument);
}

TEST_CASE("quantize rounds to the neighbouring integers", "[compression]") {
  Rng rng = make_rng(7);
  int ceils = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const std::int64_t q = quantize_value(2.3, rng);
    REQUIRE((q == 2 || q == 3));
    ceils += q == 3;
  }
  // P(ceil) = 0.3; allow a 3-standard-error band.
  const double freq = static_cast<double>(ceils) / n;
  CHECK(std::abs(freq - 0.3) < 3.0 * std::sqrt(0.3 * 0.7 / n));
}

TEST_CASE("quantize keeps integers fixed", "[compression]") {
  Rng rng = make_rng(8);
  for (int i = 0; i < 100; ++i) {
    CHECK(quantize_value(-4.0, rng) == -4);
    CHECK(quantize_value(0.0, rng) == 0);
    CHECK(quantize_value(17.0, rng) == 17);
  }
}

TEST_CASE("quantize is unbiased", "[compression]") {
  Rng rng = make_rng(9);
  const int n = 100000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i)
    sum += static_cast<double>(quantize_value(0.123, rng));
  const double mean = sum / n;
  CHECK(std::abs(mean - 0.123) < 3.0 * std::sqrt(0.123 * 0.877 / n));

  // A spread of values, each with its own Bernoulli band.
  Rng vals = make_rng(10);
  int outliers = 0;
  for (int v = 0; v < 20; ++v) {
    const double x = uniform_range(vals, -40.0, 40.0);
    const double frac = x - std::floor(x);
    double s = 0.0;
    const int m = 20000;
    for (int i = 0; i < m; ++i)
      s += static_cast<double>(quantize_value(x, rng));
    const double band = 3.0 * std::sqrt(frac * (1.0 - frac) / m) + 1e-12;
    if (std::abs(s / m - x) >= band) ++outliers;
  }
  CHECK(outliers <= 1);  // 3-sigma bands admit rare statistical misses
}

TEST_CASE("quantizer squared error matches the two-point closed form",
          "[compression]") {
  // E[(theta(x)-x)^2] - x^2 = (x-floor(x))(ceil(x)-x) - x^2 <= 0.25 - x^2.
  Rng rng = make_rng(11);
  Rng vals = make_rng(12);
  int outliers = 0;
  for (int v = 0; v < 30; ++v) {
    const double x = uniform_range(vals, -3.0, 3.0);
    const double frac = x - std::floor(x);
    const double closed = frac * (1.0 - frac) - x * x;
    CHECK(closed <= 0.25 - x * x + 1e-12);

    const int m = 20000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < m; ++i) {
      const double e = static_cast<double>(quantize_value(x, rng)) - x;
      s += e * e;
      s2 += e * e * e * e;
    }
    const double est = s / m - x * x;
    const double var = std::max(0.0, s2 / m - (s / m) * (s / m));
    const double band = 3.0 * std::sqrt(var / m) + 1e-12;
    if (std::abs(est - closed) >= band) ++outliers;
  }
  CHECK(outliers <= 1);
}

TEST_CASE("vote stays on the support", "[compression]") {
  Rng rng = make_rng(13);
  const UpdateVector u{5, 4, 3, 2, 1};
  for (int trial = 0; trial < 50; ++trial) {
    const VoteArray v = vote(u, 3, rng);
    CHECK(v.popcount() >= 1);
    CHECK(v.popcount() <= 3);
  }
  const UpdateVector point{1, 0, 0, 0};
  for (int trial = 0; trial < 50; ++trial) {
    const VoteArray v = vote(point, 10, rng);
    REQUIRE(v.bits == std::vector<std::uint8_t>{1, 0, 0, 0});
  }
}

TEST_CASE("vote rejects an all-zero vector", "[compression]") {
  Rng rng = make_rng(14);
  CHECK_THROWS_AS(vote(UpdateVector{0, 0, 0}, 3, rng), std::invalid_argument);
  CHECK_THROWS_AS(vote(UpdateVector{1, 2}, 0, rng), std::invalid_argument);
}

TEST_CASE("vote frequencies follow the closed-form pipeline", "[compression]") {
  // |u_l| = l^-1, so one draw picks index l with p_l = l^-1 / H_d and
  // q_l = 1 - (1 - p_l)^k.
  const int d = 100, k = 20, runs = 100000;
  UpdateVector u(d);
  for (int l = 0; l < d; ++l) u[l] = 1.0 / (l + 1);

  Rng rng = make_rng(15);
  std::vector<int> hits(d, 0);
  for (int t = 0; t < runs; ++t) {
    const VoteArray v = vote(u, k, rng);
    for (int l = 0; l < d; ++l) hits[l] += v.bits[l];
  }
  const PowerLawFit fit{-1.0, 1.0};
  for (int l = 1; l <= d; ++l) {
    const double q = vote_prob(sample_prob(l, fit, d), k);
    const double freq = static_cast<double>(hits[l - 1]) / runs;
    REQUIRE(std::abs(freq - q) < 0.01);
  }
}

TEST_CASE("compress keeps exactly the masked indices", "[compression]") {
  Rng rng = make_rng(16);
  const QuantConfig cfg = make_quant_config(3, 2, 0.5);  // f = 2
  REQUIRE(cfg.scale == Catch::Approx(2.0));

  VoteArray both(2);
  both.bits = {1, 1};
  const SparseUpdate s = compress({0.5, -0.5}, both, cfg, rng);
  REQUIRE(s.size() == 2);
  CHECK(s[0] == SparseEntry{0, 1});
  CHECK(s[1] == SparseEntry{1, -1});

  VoteArray none(2);
  CHECK(compress({0.5, -0.5}, none, cfg, rng).empty());
}

TEST_CASE("compress quantizes masked values unbiasedly", "[compression]") {
  Rng rng = make_rng(17);
  QuantConfig cfg;
  cfg.bits = 8;
  cfg.clients = 1;
  cfg.max_mag = 0.31;
  cfg.scale = 10.0;
  VoteArray mask(3);
  mask.bits = {1, 0, 1};
  double sum0 = 0.0, sum2 = 0.0;
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    const SparseUpdate s = compress({0.3, 0.3, 0.3}, mask, cfg, rng);
    REQUIRE(s.size() == 2);
    REQUIRE(s[0].index == 0);
    REQUIRE(s[1].index == 2);
    REQUIRE((s[0].value >= 2 && s[0].value <= 4));
    sum0 += s[0].value;
    sum2 += s[1].value;
  }
  CHECK(std::abs(sum0 / trials - 3.0) < 0.02);
  CHECK(std::abs(sum2 / trials - 3.0) < 0.02);
}

TEST_CASE("residual catches exactly what was not uploaded", "[compression]") {
  const QuantConfig cfg = make_quant_config(3, 2, 0.5);  // f = 2
  const Residual r1 =
      residual_update({0.5, -0.5}, {{0, 1}, {1, -1}}, cfg);
  CHECK(r1[0] == Catch::Approx(0.0).margin(1e-15));
  CHECK(r1[1] == Catch::Approx(0.0).margin(1e-15));

  const Residual r2 = residual_update({0.7, 0.7}, {}, cfg);
  CHECK(r2[0] == 0.7);
  CHECK(r2[1] == 0.7);

  QuantConfig f10;
  f10.scale = 10.0;
  const Residual r3 = residual_update({0.23}, {{0, 2}}, f10);
  CHECK(r3[0] == Catch::Approx(0.03));
}

TEST_CASE("residual identity reconstructs the scaled update", "[compression]") {
  Rng rng = make_rng(18);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 1 + static_cast<int>(uniform01(rng) * 40);
    UpdateVector u(d);
    VoteArray mask(d);
    double m = 0.0;
    for (int l = 0; l < d; ++l) {
      u[l] = uniform_range(rng, -2.0, 2.0);
      mask.bits[l] = uniform01(rng) < 0.5;
      m = std::max(m, std::abs(u[l]));
    }
    if (m == 0.0) continue;
    const QuantConfig cfg = make_quant_config(12, 4, m);
    const SparseUpdate s = compress(u, mask, cfg, rng);

    // Mask exactness.
    std::size_t si = 0;
    for (int l = 0; l < d; ++l) {
      if (mask.bits[l]) {
        REQUIRE(si < s.size());
        REQUIRE(s[si].index == static_cast<std::uint32_t>(l));
        ++si;
      }
    }
    REQUIRE(si == s.size());

    const Residual e = residual_update(u, s, cfg);
    std::vector<double> uploaded(d, 0.0);
    for (const SparseEntry& entry : s) uploaded[entry.index] = entry.value;
    for (int l = 0; l < d; ++l) {
      const double lhs = cfg.scale * u[l];
      const double rhs = uploaded[l] + cfg.scale * e[l];
      REQUIRE(std::abs(lhs - rhs) <=
              1e-9 * std::max(1.0, std::abs(lhs)));
      if (mask.bits[l])
        REQUIRE(std::abs(e[l]) <= 1.0 / cfg.scale + 1e-15);
      else
        REQUIRE(e[l] == u[l]);
    }
  }
}

TEST_CASE("quantized sums never overflow the signed range", "[compression]") {
  // Deterministic bound: N * max(|ceil(f m)|, |floor(-f m)|) <= 2^(b-1).
  for (double m : {0.25, 0.5, 1.0, 3.0}) {
    const QuantConfig small = make_quant_config(3, 2, m);
    const double worst = std::max(std::abs(std::ceil(small.scale * m)),
                                  std::abs(std::floor(-small.scale * m)));
    CHECK(2.0 * worst <= 4.0);
  }

  Rng rng = make_rng(19);
  const int N = 20;
  const double m = 1.7;
  const QuantConfig cfg = make_quant_config(12, N, m);
  for (int trial = 0; trial < 500; ++trial) {
    const double x = uniform_range(rng, -m, m);
    std::int64_t sum = 0;
    for (int i = 0; i < N; ++i) sum += quantize_value(cfg.scale * x, rng);
    REQUIRE(std::abs(sum) <= 2048);
  }
}
