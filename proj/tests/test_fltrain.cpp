#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "fediac/config.hpp"
#include "fediac/experiment.hpp"
#include "fediac/fltrain.hpp"
#include "fediac/rng.hpp"

using namespace fediac;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.clients = 4;
  cfg.beta = 5.0;
  cfg.data_dim = 8;
  cfg.data_classes = 4;
  cfg.train_per_class = 100;
  cfg.test_per_class = 40;
  cfg.hidden = 16;
  cfg.separation = 4.0;
  cfg.noise = 1.0;
  cfg.algo.local_iters = 2;
  cfg.algo.batch = 16;
  cfg.algo.k_frac = 0.1;
  cfg.algo.threshold_a = 1;
  cfg.algo.quant_bits = 10;
  cfg.rounds = 30;
  return cfg;
}

double shard_entropy(const ClientData& shard, int classes) {
  double total = 0.0;
  for (int c : shard.label_histogram) total += c;
  if (total == 0.0) return 0.0;
  double h = 0.0;
  for (int c : shard.label_histogram) {
    if (c == 0) continue;
    const double p = c / total;
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace

TEST_CASE("dirichlet partition is a disjoint cover", "[fltrain]") {
  Rng rng = make_rng(61);
  DatasetPair data = make_synthetic(10, 8, 60, 10, 4.0, 1.0, rng);
  Rng prng = make_rng(62);
  const auto shards = dirichlet_partition(data.train, 20, 0.5, prng);
  REQUIRE(shards.size() == 20);

  std::set<int> seen;
  std::size_t total = 0;
  for (const auto& s : shards) {
    REQUIRE_FALSE(s.indices.empty());
    for (int i : s.indices) {
      REQUIRE(seen.insert(i).second);  // disjoint
      ++total;
    }
    int histogram_total = 0;
    for (int c : s.label_histogram) histogram_total += c;
    REQUIRE(histogram_total == static_cast<int>(s.indices.size()));
  }
  REQUIRE(total == data.train.size());
}

TEST_CASE("huge beta approaches the uniform split", "[fltrain]") {
  Rng rng = make_rng(63);
  DatasetPair data = make_synthetic(10, 8, 100, 10, 4.0, 1.0, rng);
  Rng prng = make_rng(64);
  const auto shards = dirichlet_partition(data.train, 10, 1000.0, prng);
  // Chi-square distance of each shard's label histogram from uniform.
  for (const auto& s : shards) {
    double total = 0.0;
    for (int c : s.label_histogram) total += c;
    const double expected = total / data.train.classes;
    double chi2 = 0.0;
    for (int c : s.label_histogram)
      chi2 += (c - expected) * (c - expected) / expected;
    REQUIRE(chi2 < 30.0);
  }
}

TEST_CASE("smaller beta skews labels harder", "[fltrain]") {
  Rng rng = make_rng(65);
  DatasetPair data = make_synthetic(10, 8, 100, 10, 4.0, 1.0, rng);
  double skewed = 0.0, mild = 0.0;
  for (int seed = 0; seed < 20; ++seed) {
    Rng r1 = make_rng(100 + seed);
    Rng r2 = make_rng(100 + seed);
    for (const auto& s : dirichlet_partition(data.train, 10, 0.3, r1))
      skewed += shard_entropy(s, 10);
    for (const auto& s : dirichlet_partition(data.train, 10, 5.0, r2))
      mild += shard_entropy(s, 10);
  }
  REQUIRE(skewed < mild);
}

TEST_CASE("analytic gradients match central finite differences", "[fltrain]") {
  Rng rng = make_rng(66);
  DatasetPair data = make_synthetic(3, 5, 8, 2, 2.0, 1.0, rng);
  MlpModel model({5, 4, 3});
  model.init_xavier(rng);

  std::vector<int> idx{0, 5, 11, 17, 20};
  std::vector<double> grad;
  model.gradient(data.train, idx, grad);

  const double eps = 1e-5;
  double max_rel = 0.0;
  for (std::size_t p = 0; p < model.params().size(); ++p) {
    MlpModel plus = model, minus = model;
    plus.params()[p] += eps;
    minus.params()[p] -= eps;
    const double fd =
        (plus.loss(data.train, idx) - minus.loss(data.train, idx)) /
        (2.0 * eps);
    const double denom = std::max({std::abs(fd), std::abs(grad[p]), 1e-8});
    max_rel = std::max(max_rel, std::abs(fd - grad[p]) / denom);
  }
  REQUIRE(max_rel < 1e-4);
}

TEST_CASE("zero learning rate yields a zero update", "[fltrain]") {
  Rng rng = make_rng(67);
  DatasetPair data = make_synthetic(3, 5, 20, 5, 2.0, 1.0, rng);
  MlpModel model({5, 4, 3});
  model.init_xavier(rng);
  ClientData shard;
  for (int i = 0; i < 30; ++i) shard.indices.push_back(i);
  AlgoConfig cfg;
  cfg.local_iters = 1;
  const UpdateVector u = local_train(model, data.train, shard, cfg, 0.0, rng);
  for (double v : u) REQUIRE(v == 0.0);
  AlgoConfig bad;
  bad.local_iters = 0;
  CHECK_THROWS_AS(local_train(model, data.train, shard, bad, 0.1, rng),
                  std::invalid_argument);
}

TEST_CASE("integer aggregation path matches the dense mean within 2/f",
          "[fltrain]") {
  // All-ones mask, wide words: compress -> packets -> switch -> apply must
  // land within quantization granularity of plain float averaging.
  Rng rng = make_rng(68);
  const int N = 4, d = 300, bits = 32;
  std::vector<UpdateVector> updates(N, UpdateVector(d));
  double m = 0.0;
  for (auto& u : updates)
    for (double& v : u) {
      v = uniform_range(rng, -0.5, 0.5);
      m = std::max(m, std::abs(v));
    }
  const QuantConfig cfg = make_quant_config(bits, N, m);
  VoteArray all(d);
  std::fill(all.bits.begin(), all.bits.end(), std::uint8_t{1});

  const std::size_t cap = 64;
  std::vector<SeqSpec> specs;
  for (std::size_t start = 0, seq = 0; start < d; start += cap, ++seq)
    specs.push_back({static_cast<std::uint32_t>(seq),
                     static_cast<std::uint32_t>(std::min(cap, d - start)),
                     static_cast<std::uint32_t>(N)});
  SwitchState sw(1u << 20, N, 1);
  sw.begin_data_phase(specs, bits);

  std::vector<double> applied(d, 0.0);
  for (int i = 0; i < N; ++i) {
    const SparseUpdate sparse = compress(updates[i], all, cfg, rng);
    std::vector<std::int32_t> values(sparse.size());
    for (std::size_t j = 0; j < sparse.size(); ++j) values[j] = sparse[j].value;
    for (const Packet& p : encode_data_packets(1, i, values, bits, cap))
      for (const Packet& done : sw.ingest_data_packet(p)) {
        const auto sums = decode_data_payload(done, specs[done.seq].values, bits);
        for (std::size_t j = 0; j < sums.size(); ++j)
          applied[done.seq * cap + j] = sums[j] / (N * cfg.scale);
      }
  }
  sw.finish_data_phase();

  for (int l = 0; l < d; ++l) {
    double mean = 0.0;
    for (const auto& u : updates) mean += u[l];
    mean /= N;
    REQUIRE(std::abs(applied[l] - mean) <= 2.0 / cfg.scale);
  }
}

TEST_CASE("zero updates leave the model and residuals untouched", "[fltrain]") {
  ExperimentConfig cfg = tiny_config();
  cfg.algo.lr0 = 0.0;  // zero gradient steps
  cfg.algo.bootstrap = false;
  for (Algorithm algo : {Algorithm::kFediAC, Algorithm::kSwitchML,
                         Algorithm::kTopkBlock, Algorithm::kDense}) {
    Trainer trainer = make_trainer(cfg, algo, 5);
    const std::vector<double> before = trainer.model().params();
    trainer.run_round();
    REQUIRE(trainer.model().params() == before);
    for (const Residual& e : trainer.residuals())
      for (double v : e) REQUIRE(v == 0.0);
  }
}

TEST_CASE("wide-word dense quantization tracks the float oracle", "[fltrain]") {
  ExperimentConfig cfg = tiny_config();
  cfg.algo.quant_bits = 32;
  cfg.rounds = 10;

  Trainer dense = make_trainer(cfg, Algorithm::kDense, 3);
  Trainer switchml = make_trainer(cfg, Algorithm::kSwitchML, 3);
  for (int t = 0; t < 10; ++t) {
    dense.run_round();
    switchml.run_round();
  }
  double max_diff = 0.0;
  for (std::size_t i = 0; i < dense.model().params().size(); ++i)
    max_diff = std::max(max_diff, std::abs(dense.model().params()[i] -
                                           switchml.model().params()[i]));
  REQUIRE(max_diff < 1e-5);
}

TEST_CASE("per-round upload traffic orders dense >= quantized >= voted",
          "[fltrain]") {
  ExperimentConfig cfg = tiny_config();
  cfg.algo.quant_bits = 12;
  cfg.algo.bootstrap = false;
  cfg.algo.threshold_a = 2;

  Trainer dense = make_trainer(cfg, Algorithm::kDense, 7);
  Trainer switchml = make_trainer(cfg, Algorithm::kSwitchML, 7);
  Trainer fediac = make_trainer(cfg, Algorithm::kFediAC, 7);
  for (int t = 0; t < 3; ++t) {
    const RoundMetrics md = dense.run_round();
    const RoundMetrics ms = switchml.run_round();
    const RoundMetrics mf = fediac.run_round();
    REQUIRE(md.upload_bytes >= ms.upload_bytes);
    if (mf.gia_density < 1.0) REQUIRE(ms.upload_bytes >= mf.upload_bytes);
    REQUIRE(mf.gia_density <= 1.0);
  }
}

TEST_CASE("full-fraction block sparsification equals dense quantization",
          "[fltrain]") {
  ExperimentConfig cfg = tiny_config();
  cfg.algo.topk_frac = 1.0;
  Trainer topk = make_trainer(cfg, Algorithm::kTopkBlock, 9);
  Trainer switchml = make_trainer(cfg, Algorithm::kSwitchML, 9);
  const RoundMetrics mt = topk.run_round();
  const RoundMetrics ms = switchml.run_round();
  CHECK(mt.upload_bytes == ms.upload_bytes);
  CHECK(mt.download_bytes == ms.download_bytes);
  CHECK(mt.gia_density == 1.0);
}

TEST_CASE("residual feedback conserves the update mass", "[fltrain]") {
  ExperimentConfig cfg = tiny_config();
  cfg.algo.bootstrap = false;
  cfg.algo.threshold_a = 2;
  Trainer trainer = make_trainer(cfg, Algorithm::kFediAC, 11);
  for (int t = 0; t < 3; ++t) {
    const RoundMetrics m = trainer.run_round();
    REQUIRE(m.gia_density >= 0.0);
    REQUIRE(m.gia_density <= 1.0);
  }
  // Residuals stay bounded by the update scale; they never explode.
  for (const Residual& e : trainer.residuals())
    for (double v : e) REQUIRE(std::isfinite(v));
}

TEST_CASE("bootstrap recovers planted power-law parameters", "[fltrain]") {
  // Every client reports |U{l}| = phi l^alpha exactly (shuffled positions).
  const int N = 6, d = 400, draws = 40;
  const double alpha = -0.9, phi = 1.3;
  Rng rng = make_rng(69);
  std::vector<UpdateVector> updates;
  for (int i = 0; i < N; ++i) {
    UpdateVector u(d);
    for (int l = 0; l < d; ++l)
      u[l] = phi * std::pow(l + 1.0, alpha) * (uniform01(rng) < 0.5 ? -1 : 1);
    for (std::size_t j = u.size(); j > 1; --j)
      std::swap(u[j - 1], u[static_cast<std::size_t>(uniform01(rng) * j)]);
    updates.push_back(std::move(u));
  }
  const BootstrapResult result =
      bootstrap_from_updates(updates, draws, {1, 2, 3, 4}, 1.0, 3, 12);
  REQUIRE(result.fit.has_value());
  CHECK(std::abs(result.fit->alpha - alpha) < 0.02);
  CHECK(std::abs(result.fit->phi - phi) < 0.02);

  const TuneResult direct =
      tune_a({1, 2, 3, 4}, d, draws, N, {alpha, phi}, phi, 1.0);
  CHECK(result.a == direct.a);
  CHECK(result.bits == direct.bits);
}

TEST_CASE("bootstrap falls back on degenerate updates", "[fltrain]") {
  const std::vector<UpdateVector> zeros(3, UpdateVector(50, 0.0));
  const BootstrapResult result =
      bootstrap_from_updates(zeros, 5, {1, 2}, 1.0, 2, 11);
  CHECK_FALSE(result.fit.has_value());
  CHECK(result.a == 2);
  CHECK(result.bits == 11);
}

TEST_CASE("identical seeds give bit-identical models", "[fltrain]") {
  ExperimentConfig cfg = tiny_config();
  Trainer t1 = make_trainer(cfg, Algorithm::kFediAC, 13);
  Trainer t2 = make_trainer(cfg, Algorithm::kFediAC, 13);
  for (int t = 0; t < 4; ++t) {
    t1.run_round();
    t2.run_round();
  }
  REQUIRE(t1.model().params() == t2.model().params());
  REQUIRE(t1.fediac_a() == t2.fediac_a());
  REQUIRE(t1.fediac_bits() == t2.fediac_bits());
}

TEST_CASE("every scheme tracks the float oracle on an easy task", "[fltrain]") {
  ExperimentConfig cfg = tiny_config();
  cfg.rounds = 60;
  Trainer dense = make_trainer(cfg, Algorithm::kDense, 17);
  for (int t = 0; t < 30; ++t) dense.run_round();
  const double oracle = dense.test_accuracy();
  REQUIRE(oracle > 0.6);

  for (Algorithm algo : {Algorithm::kFediAC, Algorithm::kSwitchML,
                         Algorithm::kTopkBlock}) {
    Trainer trainer = make_trainer(cfg, algo, 17);
    double best = 0.0;
    for (int t = 0; t < 60; ++t) {
      trainer.run_round();
      best = std::max(best, trainer.test_accuracy());
      if (best >= 0.9 * oracle) break;
    }
    INFO(algorithm_name(algo));
    REQUIRE(best >= 0.9 * oracle);
  }
}
