#pragma once

// The federated training loop with pluggable aggregation schemes. Every
// global iteration runs local training on each client, compresses and ships
// model updates through the switch and timing simulators, and applies the
// aggregated result identically on every client.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fediac/analysis.hpp"
#include "fediac/compression.hpp"
#include "fediac/dataset.hpp"
#include "fediac/model.hpp"
#include "fediac/netsim.hpp"
#include "fediac/packet.hpp"
#include "fediac/rng.hpp"
#include "fediac/switch_sim.hpp"

namespace fediac {

enum class Algorithm { kFediAC, kSwitchML, kTopkBlock, kDense };

inline const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::kFediAC: return "FEDIAC";
    case Algorithm::kSwitchML: return "SWITCHML";
    case Algorithm::kTopkBlock: return "TOPK_BLOCK";
    case Algorithm::kDense: return "DENSE";
  }
  return "?";
}

inline Algorithm parse_algorithm(const std::string& name) {
  if (name == "FEDIAC") return Algorithm::kFediAC;
  if (name == "SWITCHML") return Algorithm::kSwitchML;
  if (name == "TOPK_BLOCK") return Algorithm::kTopkBlock;
  if (name == "DENSE") return Algorithm::kDense;
  throw std::invalid_argument("unknown algorithm: " + name);
}

struct AlgoConfig {
  Algorithm algorithm = Algorithm::kFediAC;
  int local_iters = 5;  // E
  int batch = 32;       // B
  double lr0 = 0.1;     // eta_t = lr0 / (1 + sqrt(t)/lr_s)
  double lr_s = 40.0;
  double k_frac = 0.05;        // votes per client, as a fraction of d
  int threshold_a = 3;         // fallback / fixed vote threshold
  int quant_bits = 12;         // fallback / fixed b; also SwitchML's b
  bool bootstrap = true;       // fit + tune (a, b) in the first iteration
  double traffic_budget = 1.0; // cap on E[k_S]/d during tuning
  bool fixed_max_mag = false;  // reuse the first round's m for the whole run
  double topk_frac = 0.05;     // block-sparse baseline's k
};

inline double learning_rate(const AlgoConfig& cfg, int t) {
  return cfg.lr0 / (1.0 + std::sqrt(static_cast<double>(t)) / cfg.lr_s);
}

// E minibatch gradient steps from the shared model; returns w_start - w_end.
inline UpdateVector local_train(const MlpModel& global, const Dataset& data,
                                const ClientData& shard, const AlgoConfig& cfg,
                                double lr, Rng& rng) {
  if (cfg.local_iters < 1)
    throw std::invalid_argument("local iteration count must be >= 1");
  if (shard.indices.empty())
    throw std::invalid_argument("client shard is empty");
  MlpModel local = global;
  std::vector<double> grad;
  std::vector<int> batch(static_cast<std::size_t>(cfg.batch));
  for (int step = 0; step < cfg.local_iters; ++step) {
    for (int& b : batch)
      b = shard.indices[static_cast<std::size_t>(uniform01(rng) *
                                                 shard.indices.size())];
    const double loss = local.gradient(data, batch, grad);
    if (!std::isfinite(loss))
      throw std::runtime_error("local training diverged (non-finite loss)");
    for (std::size_t i = 0; i < grad.size(); ++i)
      local.params()[i] -= lr * grad[i];
  }
  UpdateVector u(global.params().size());
  for (std::size_t i = 0; i < u.size(); ++i)
    u[i] = global.params()[i] - local.params()[i];
  return u;
}

struct RoundMetrics {
  double sim_seconds = 0.0;  // this round's simulated wall clock
  double t_train = 0.0, t_phase1 = 0.0, t_phase2 = 0.0, t_down = 0.0;
  std::uint64_t upload_bytes = 0, download_bytes = 0;
  std::uint64_t agg_count = 0;  // switch packet folds this round
  double gia_density = 0.0;     // uploaded dimensions / d
};

struct BootstrapResult {
  std::optional<PowerLawFit> fit;  // empty when the fallback was used
  int a = 1;
  int bits = 2;
};

// Server-side first-iteration tuning: the rank-averaged magnitude profile of
// the dense updates is fitted to a power law and the (a, b) search is run on
// it. Degenerate inputs (all-zero updates, infeasible search) fall back to
// the configured pair.
inline BootstrapResult bootstrap_from_updates(
    const std::vector<UpdateVector>& updates, int draws,
    const std::vector<int>& candidate_as, double traffic_budget,
    int fallback_a, int fallback_bits) {
  if (updates.empty()) throw std::invalid_argument("no client updates");
  const std::size_t d = updates.front().size();
  const int clients = static_cast<int>(updates.size());

  std::vector<double> pooled(d, 0.0);
  double max_mag = 0.0;
  for (const UpdateVector& u : updates) {
    std::vector<double> mags(u.size());
    for (std::size_t l = 0; l < u.size(); ++l) mags[l] = std::abs(u[l]);
    std::sort(mags.rbegin(), mags.rend());
    for (std::size_t l = 0; l < d; ++l) pooled[l] += mags[l];
    max_mag = std::max(max_mag, mags.empty() ? 0.0 : mags.front());
  }
  for (double& v : pooled) v /= static_cast<double>(clients);

  BootstrapResult result;
  result.a = fallback_a;
  result.bits = fallback_bits;
  if (max_mag == 0.0) return result;
  try {
    const PowerLawFit fit = fit_power_law(pooled);
    const TuneResult tuned = tune_a(candidate_as, static_cast<int>(d), draws,
                                    clients, fit, max_mag, traffic_budget);
    result.fit = fit;
    result.a = tuned.a;
    result.bits = tuned.bits;
  } catch (const std::exception&) {
    // keep the fallback pair
  }
  return result;
}

namespace detail {

// Phase sink that feeds vote packets into the switch as they are served and
// releases the index-array broadcast once all of them went through.
class VoteSink : public PacketSink {
 public:
  VoteSink(SwitchState& sw, std::size_t gia_packets)
      : sw_(sw), gia_packets_(gia_packets) {}
  std::size_t on_served(const Packet& p) override {
    sw_.ingest_vote_packet(p);
    return 0;
  }
  std::size_t on_phase_complete() override { return gia_packets_; }

 private:
  SwitchState& sw_;
  std::size_t gia_packets_;
};

// Phase sink that runs the slot pipeline and collects completed aggregates.
class DataSink : public PacketSink {
 public:
  explicit DataSink(SwitchState& sw) : sw_(sw) {}
  std::size_t on_served(const Packet& p) override {
    std::vector<Packet> done = sw_.ingest_data_packet(p);
    const std::size_t n = done.size();
    for (Packet& pkt : done) completed.push_back(std::move(pkt));
    return n;
  }
  std::size_t on_phase_complete() override { return 0; }

  std::vector<Packet> completed;

 private:
  SwitchState& sw_;
};

inline std::uint64_t wire_bytes(const std::vector<Packet>& packets) {
  std::uint64_t total = 0;
  for (const Packet& p : packets) total += p.wire_bytes();
  return total;
}

// Float payloads (dense rounds) are accounted arithmetically: full 1500-byte
// frames plus one partial frame.
inline std::uint64_t float_burst_bytes(std::size_t values) {
  const std::size_t cap = (kPacketBytes - kHeaderBytes) / 4;
  std::uint64_t total = 0;
  for (std::size_t start = 0; start < values; start += cap)
    total += kHeaderBytes + 4 * std::min(cap, values - start);
  return total;
}

inline std::size_t float_burst_packets(std::size_t values) {
  const std::size_t cap = (kPacketBytes - kHeaderBytes) / 4;
  return (values + cap - 1) / cap;
}

inline std::vector<Packet> dummy_burst(std::size_t count, Phase phase,
                                       std::uint32_t client) {
  std::vector<Packet> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i].phase = phase;
    out[i].client = client;
    out[i].seq = static_cast<std::uint32_t>(i);
  }
  return out;
}

}  // namespace detail

// One experiment cell: a dataset, its client shards, a switch tier and one
// aggregation algorithm, advanced round by round.
class Trainer {
 public:
  Trainer(DatasetPair data, std::vector<ClientData> shards, MlpConfig model_cfg,
          AlgoConfig algo, RatePlan plan, std::size_t memory_budget,
          std::uint64_t seed)
      : data_(std::move(data)),
        shards_(std::move(shards)),
        model_(model_cfg),
        algo_(algo),
        plan_(std::move(plan)),
        memory_budget_(memory_budget),
        seed_(seed),
        clients_(static_cast<int>(shards_.size())),
        dim_(MlpModel::param_count(model_cfg)) {
    if (shards_.empty()) throw std::invalid_argument("no client shards");
    if (plan_.upload_rates.size() != shards_.size())
      throw std::invalid_argument("rate plan does not match client count");
    Rng init = make_rng(seed_, {hash_tag("init")});
    model_.init_xavier(init);
    residuals_.assign(shards_.size(), Residual(dim_, 0.0));
    fediac_a_ = algo_.threshold_a;
    fediac_bits_ = algo_.quant_bits;
    if (fediac_a_ < 1 || fediac_a_ > clients_)
      throw std::invalid_argument("vote threshold must be in [1, N]");
  }

  // Runs global iteration t (1-based) and advances the clock.
  RoundMetrics run_round() {
    const int t = ++round_;
    switch (algo_.algorithm) {
      case Algorithm::kDense:
        return run_dense_round(t, /*record_fit=*/false);
      case Algorithm::kSwitchML:
        return run_switchml_round(t);
      case Algorithm::kTopkBlock:
        return run_topk_round(t);
      case Algorithm::kFediAC:
        if (t == 1 && algo_.bootstrap)
          return run_dense_round(t, /*record_fit=*/true);
        return run_fediac_round(t);
    }
    throw std::logic_error("unreachable");
  }

  const MlpModel& model() const { return model_; }
  const std::vector<Residual>& residuals() const { return residuals_; }
  int rounds_run() const { return round_; }
  int fediac_a() const { return fediac_a_; }
  int fediac_bits() const { return fediac_bits_; }
  const std::optional<PowerLawFit>& bootstrap_fit() const { return fit_; }
  std::size_t dimension() const { return dim_; }

  double train_loss_sample() {
    const std::size_t n = std::min<std::size_t>(data_.train.size(), 1000);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return model_.loss(data_.train, idx);
  }

  double test_accuracy() const { return model_.accuracy(data_.test); }

 private:
  static std::uint64_t hash_tag(const char* s) {
    std::uint64_t h = 1469598103934665603ull;
    for (; *s; ++s) h = (h ^ static_cast<std::uint64_t>(*s)) * 1099511628211ull;
    return h;
  }

  Rng round_rng(const char* role, int t, int client = -1) const {
    return make_rng(seed_, {hash_tag(role), static_cast<std::uint64_t>(t),
                            static_cast<std::uint64_t>(client + 1)});
  }

  // Local updates plus carried residual for every client.
  std::vector<UpdateVector> gather_updates(int t, bool add_residual) {
    const double lr = learning_rate(algo_, t);
    std::vector<UpdateVector> updates;
    updates.reserve(shards_.size());
    for (int i = 0; i < clients_; ++i) {
      Rng rng = round_rng("batch", t, i);
      UpdateVector u =
          local_train(model_, data_.train, shards_[static_cast<std::size_t>(i)],
                      algo_, lr, rng);
      if (add_residual) {
        const Residual& e = residuals_[static_cast<std::size_t>(i)];
        for (std::size_t l = 0; l < u.size(); ++l) u[l] += e[l];
      }
      updates.push_back(std::move(u));
    }
    return updates;
  }

  double global_max_magnitude(const std::vector<UpdateVector>& updates) const {
    double m = 0.0;
    for (const UpdateVector& u : updates)
      for (double v : u) m = std::max(m, std::abs(v));
    return m;
  }

  double pick_max_mag(const std::vector<UpdateVector>& updates) {
    if (algo_.fixed_max_mag && fixed_m_ > 0.0) return fixed_m_;
    const double m = global_max_magnitude(updates);
    if (algo_.fixed_max_mag && fixed_m_ == 0.0) fixed_m_ = m;
    return m;
  }

  // --- Dense (oracle / bootstrap) --------------------------------------

  RoundMetrics run_dense_round(int t, bool record_fit) {
    std::vector<UpdateVector> updates = gather_updates(t, record_fit);
    RoundMetrics metrics;
    metrics.gia_density = 1.0;

    // Float aggregation at the server; the switch integer path is bypassed.
    std::vector<double> mean(dim_, 0.0);
    for (const UpdateVector& u : updates)
      for (std::size_t l = 0; l < dim_; ++l) mean[l] += u[l];
    for (std::size_t l = 0; l < dim_; ++l) {
      mean[l] /= static_cast<double>(clients_);
      model_.params()[l] -= mean[l];
    }
    if (record_fit) {
      bootstrap_tune(updates);
      for (auto& e : residuals_) std::fill(e.begin(), e.end(), 0.0);
    }

    const std::size_t pkts = detail::float_burst_packets(dim_);
    std::vector<std::vector<Packet>> bursts;
    for (int i = 0; i < clients_; ++i)
      bursts.push_back(detail::dummy_burst(
          pkts, Phase::kData, static_cast<std::uint32_t>(i)));
    BarrierSink sink(pkts);
    Rng net = round_rng("net", t);
    const PhaseStats stats = run_round_timing(bursts, sink, net);
    fill_single_phase_timing(metrics, stats);
    metrics.upload_bytes = static_cast<std::uint64_t>(clients_) *
                           detail::float_burst_bytes(dim_);
    metrics.download_bytes = detail::float_burst_bytes(dim_);
    return metrics;
  }

  void bootstrap_tune(const std::vector<UpdateVector>& updates) {
    std::vector<int> candidates;
    for (int a = 1; a <= std::min(4, clients_); ++a) candidates.push_back(a);
    const BootstrapResult result = bootstrap_from_updates(
        updates, vote_draws(), candidates, algo_.traffic_budget,
        algo_.threshold_a, algo_.quant_bits);
    fit_ = result.fit;
    fediac_a_ = result.a;
    fediac_bits_ = result.bits;
  }

  int vote_draws() const {
    return std::max(1, static_cast<int>(
                           std::llround(algo_.k_frac *
                                        static_cast<double>(dim_))));
  }

  // --- FediAC -----------------------------------------------------------

  RoundMetrics run_fediac_round(int t) {
    std::vector<UpdateVector> updates = gather_updates(t, true);
    const double m = pick_max_mag(updates);
    RoundMetrics metrics;

    // Phase 1: votes up, index array down.
    SwitchState sw(memory_budget_, clients_, fediac_a_);
    sw.begin_vote_phase(dim_, vote_capacity());
    std::vector<std::vector<Packet>> vote_bursts;
    for (int i = 0; i < clients_; ++i) {
      VoteArray votes(dim_);
      const UpdateVector& u = updates[static_cast<std::size_t>(i)];
      Rng vrng = round_rng("vote", t, i);
      try {
        votes = vote(u, vote_draws(), vrng);
      } catch (const std::invalid_argument&) {
        // An all-zero update votes for nothing.
      }
      vote_bursts.push_back(encode_vote_packets(
          static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(i), votes));
    }
    const std::size_t gia_packets =
        (dim_ + vote_capacity() - 1) / vote_capacity();
    detail::VoteSink vote_sink(sw, gia_packets);
    Rng net1 = round_rng("net1", t);
    const PhaseStats phase1 = run_round_timing(vote_bursts, vote_sink, net1);
    const VoteArray gia = sw.finish_vote_phase();
    const std::vector<std::size_t> gia_indices = set_bits(gia);
    metrics.gia_density =
        static_cast<double>(gia_indices.size()) / static_cast<double>(dim_);

    for (const auto& burst : vote_bursts)
      metrics.upload_bytes += detail::wire_bytes(burst);
    metrics.upload_bytes += 8ull * static_cast<std::uint64_t>(clients_);  // m
    metrics.download_bytes += gia_packets * kPacketBytes + 8;

    metrics.t_train = max_train_delay();
    metrics.t_phase1 = phase1.end - metrics.t_train;

    if (gia_indices.empty() || m == 0.0) {
      // Nothing survives the threshold: the model is unchanged and the
      // residuals carry the whole update forward.
      for (int i = 0; i < clients_; ++i)
        residuals_[static_cast<std::size_t>(i)] =
            updates[static_cast<std::size_t>(i)];
      metrics.sim_seconds = phase1.end;
      metrics.agg_count = sw.aggregation_count();
      return metrics;
    }

    const QuantConfig cfg = make_quant_config(fediac_bits_, clients_, m);
    const std::size_t cap = data_capacity(cfg.bits);

    std::vector<std::vector<Packet>> data_bursts;
    for (int i = 0; i < clients_; ++i) {
      Rng qrng = round_rng("quant", t, i);
      const SparseUpdate sparse =
          compress(updates[static_cast<std::size_t>(i)], gia, cfg, qrng);
      residuals_[static_cast<std::size_t>(i)] =
          residual_update(updates[static_cast<std::size_t>(i)], sparse, cfg);
      std::vector<std::int32_t> values(sparse.size());
      for (std::size_t j = 0; j < sparse.size(); ++j)
        values[j] = sparse[j].value;
      data_bursts.push_back(encode_data_packets(
          static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(i), values,
          cfg.bits, cap));
    }

    std::vector<SeqSpec> specs;
    for (std::size_t start = 0, seq = 0; start < gia_indices.size();
         start += cap, ++seq)
      specs.push_back({static_cast<std::uint32_t>(seq),
                       static_cast<std::uint32_t>(
                           std::min(cap, gia_indices.size() - start)),
                       static_cast<std::uint32_t>(clients_)});
    sw.begin_data_phase(specs, cfg.bits);

    detail::DataSink data_sink(sw);
    std::vector<double> starts(static_cast<std::size_t>(clients_), phase1.end);
    Rng net2 = round_rng("net2", t);
    const PhaseStats phase2 =
        simulate_phase(starts, data_bursts, plan_, data_sink, net2);
    sw.finish_data_phase();

    apply_masked_sum(data_sink.completed, gia_indices, specs, cfg);

    for (const auto& burst : data_bursts)
      metrics.upload_bytes += detail::wire_bytes(burst);
    metrics.download_bytes += detail::wire_bytes(data_sink.completed);
    metrics.t_phase2 = phase2.last_service - phase1.end;
    metrics.t_down = phase2.end - phase2.last_service;
    metrics.sim_seconds = phase2.end;
    metrics.agg_count = sw.aggregation_count();
    return metrics;
  }

  // --- SwitchML-style dense integer rounds ------------------------------

  RoundMetrics run_switchml_round(int t) {
    std::vector<UpdateVector> updates = gather_updates(t, false);
    const double m = pick_max_mag(updates);
    RoundMetrics metrics;
    metrics.gia_density = 1.0;
    metrics.t_train = max_train_delay();

    if (m == 0.0) {
      metrics.sim_seconds = metrics.t_train;
      return metrics;
    }
    const QuantConfig cfg = make_quant_config(algo_.quant_bits, clients_, m);
    VoteArray all(dim_);
    std::fill(all.bits.begin(), all.bits.end(), std::uint8_t{1});
    const std::vector<std::size_t> indices = set_bits(all);
    const std::size_t cap = data_capacity(cfg.bits);

    std::vector<std::vector<Packet>> bursts;
    for (int i = 0; i < clients_; ++i) {
      Rng qrng = round_rng("quant", t, i);
      const SparseUpdate sparse =
          compress(updates[static_cast<std::size_t>(i)], all, cfg, qrng);
      std::vector<std::int32_t> values(sparse.size());
      for (std::size_t j = 0; j < sparse.size(); ++j)
        values[j] = sparse[j].value;
      bursts.push_back(encode_data_packets(static_cast<std::uint32_t>(t),
                                           static_cast<std::uint32_t>(i),
                                           values, cfg.bits, cap));
    }

    std::vector<SeqSpec> specs;
    for (std::size_t start = 0, seq = 0; start < dim_; start += cap, ++seq)
      specs.push_back({static_cast<std::uint32_t>(seq),
                       static_cast<std::uint32_t>(std::min(cap, dim_ - start)),
                       static_cast<std::uint32_t>(clients_)});
    SwitchState sw(memory_budget_, clients_, 1);
    sw.begin_data_phase(specs, cfg.bits);

    detail::DataSink sink(sw);
    Rng net = round_rng("net", t);
    const PhaseStats stats = run_round_timing(bursts, sink, net);
    sw.finish_data_phase();
    apply_masked_sum(sink.completed, indices, specs, cfg);

    for (const auto& burst : bursts)
      metrics.upload_bytes += detail::wire_bytes(burst);
    metrics.upload_bytes += 8ull * static_cast<std::uint64_t>(clients_);
    metrics.download_bytes = detail::wire_bytes(sink.completed) + 8;
    metrics.t_phase2 = stats.last_service - metrics.t_train;
    metrics.t_down = stats.end - stats.last_service;
    metrics.sim_seconds = stats.end;
    metrics.agg_count = sw.aggregation_count();
    return metrics;
  }

  // --- Block-sparse baseline --------------------------------------------

  RoundMetrics run_topk_round(int t) {
    std::vector<UpdateVector> updates = gather_updates(t, true);
    const double m = pick_max_mag(updates);
    RoundMetrics metrics;
    metrics.t_train = max_train_delay();
    if (m == 0.0) {
      for (int i = 0; i < clients_; ++i)
        residuals_[static_cast<std::size_t>(i)] =
            updates[static_cast<std::size_t>(i)];
      metrics.sim_seconds = metrics.t_train;
      return metrics;
    }

    const QuantConfig cfg = make_quant_config(algo_.quant_bits, clients_, m);
    const std::size_t cap = data_capacity(cfg.bits);
    const std::size_t blocks = (dim_ + cap - 1) / cap;
    const int keep = std::max(
        1, static_cast<int>(std::llround(algo_.topk_frac *
                                         static_cast<double>(dim_))));

    // Per client: top-k mask, quantized survivors, residual, non-empty blocks.
    std::vector<std::vector<std::int32_t>> dense_values(
        static_cast<std::size_t>(clients_));
    std::vector<std::vector<std::uint8_t>> sends(
        static_cast<std::size_t>(clients_),
        std::vector<std::uint8_t>(blocks, 0));
    for (int i = 0; i < clients_; ++i) {
      UpdateVector& u = updates[static_cast<std::size_t>(i)];
      std::vector<std::size_t> order(dim_);
      std::iota(order.begin(), order.end(), 0);
      std::nth_element(order.begin(),
                       order.begin() + std::min<std::size_t>(keep, dim_) - 1,
                       order.end(), [&u](std::size_t a, std::size_t b) {
                         const double ma = std::abs(u[a]), mb = std::abs(u[b]);
                         return ma != mb ? ma > mb : a < b;
                       });
      VoteArray mask(dim_);
      for (int j = 0; j < keep && j < static_cast<int>(dim_); ++j)
        mask.bits[order[static_cast<std::size_t>(j)]] = 1;

      Rng qrng = round_rng("quant", t, i);
      const SparseUpdate sparse = compress(u, mask, cfg, qrng);
      residuals_[static_cast<std::size_t>(i)] = residual_update(u, sparse, cfg);

      auto& dense = dense_values[static_cast<std::size_t>(i)];
      dense.assign(dim_, 0);
      for (const SparseEntry& s : sparse) {
        dense[s.index] = s.value;
        sends[static_cast<std::size_t>(i)][s.index / cap] = 1;
      }
    }

    // Only blocks holding at least one selected coordinate travel.
    std::vector<SeqSpec> specs;
    std::vector<std::uint32_t> expected(blocks, 0);
    for (std::size_t b = 0; b < blocks; ++b)
      for (int i = 0; i < clients_; ++i)
        expected[b] += sends[static_cast<std::size_t>(i)][b];
    for (std::size_t b = 0; b < blocks; ++b)
      if (expected[b] > 0)
        specs.push_back({static_cast<std::uint32_t>(b),
                         static_cast<std::uint32_t>(
                             std::min(cap, dim_ - b * cap)),
                         expected[b]});

    std::vector<std::vector<Packet>> bursts(static_cast<std::size_t>(clients_));
    for (int i = 0; i < clients_; ++i) {
      for (std::size_t b = 0; b < blocks; ++b) {
        if (!sends[static_cast<std::size_t>(i)][b]) continue;
        const std::size_t n = std::min(cap, dim_ - b * cap);
        std::vector<std::int32_t> vals(
            dense_values[static_cast<std::size_t>(i)].begin() +
                static_cast<std::ptrdiff_t>(b * cap),
            dense_values[static_cast<std::size_t>(i)].begin() +
                static_cast<std::ptrdiff_t>(b * cap + n));
        std::vector<Packet> pkts = encode_data_packets(
            static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(i), vals,
            cfg.bits, cap);
        pkts[0].seq = static_cast<std::uint32_t>(b);
        bursts[static_cast<std::size_t>(i)].push_back(std::move(pkts[0]));
      }
    }

    SwitchState sw(memory_budget_, clients_, 1);
    sw.begin_data_phase(specs, cfg.bits);
    detail::DataSink sink(sw);
    Rng net = round_rng("net", t);
    const PhaseStats stats = run_round_timing(bursts, sink, net);
    sw.finish_data_phase();

    // Apply over the union of travelled blocks.
    double touched = 0.0;
    for (const Packet& done : sink.completed) {
      const std::size_t b = done.seq;
      const std::size_t n = std::min(cap, dim_ - b * cap);
      const auto sums = decode_data_payload(done, n, cfg.bits);
      for (std::size_t j = 0; j < n; ++j)
        model_.params()[b * cap + j] -=
            static_cast<double>(sums[j]) /
            (static_cast<double>(clients_) * cfg.scale);
      touched += static_cast<double>(n);
    }
    metrics.gia_density = touched / static_cast<double>(dim_);

    for (const auto& burst : bursts)
      metrics.upload_bytes += detail::wire_bytes(burst);
    metrics.upload_bytes += 8ull * static_cast<std::uint64_t>(clients_);
    metrics.download_bytes = detail::wire_bytes(sink.completed) + 8;
    metrics.t_phase2 = stats.last_service - metrics.t_train;
    metrics.t_down = stats.end - stats.last_service;
    metrics.sim_seconds = stats.end;
    metrics.agg_count = sw.aggregation_count();
    return metrics;
  }

  // --- Shared helpers ----------------------------------------------------

  PhaseStats run_round_timing(const std::vector<std::vector<Packet>>& bursts,
                              PacketSink& sink, Rng& rng) {
    return simulate_phase(plan_.train_delays, bursts, plan_, sink, rng);
  }

  double max_train_delay() const {
    double m = 0.0;
    for (double t : plan_.train_delays) m = std::max(m, t);
    return m;
  }

  void fill_single_phase_timing(RoundMetrics& metrics,
                                const PhaseStats& stats) const {
    metrics.t_train = max_train_delay();
    metrics.t_phase2 = std::max(0.0, stats.last_service - metrics.t_train);
    metrics.t_down = stats.end - stats.last_service;
    metrics.sim_seconds = stats.end;
  }

  static std::vector<std::size_t> set_bits(const VoteArray& v) {
    std::vector<std::size_t> idx;
    idx.reserve(v.popcount());
    for (std::size_t l = 0; l < v.size(); ++l)
      if (v.bits[l]) idx.push_back(l);
    return idx;
  }

  // w -= sum / (N f) at the masked coordinates, identically on all clients.
  void apply_masked_sum(const std::vector<Packet>& completed,
                        const std::vector<std::size_t>& indices,
                        const std::vector<SeqSpec>& specs,
                        const QuantConfig& cfg) {
    const std::size_t cap = data_capacity(cfg.bits);
    for (const Packet& done : completed) {
      const SeqSpec& spec = specs[done.seq];
      const auto sums = decode_data_payload(done, spec.values, cfg.bits);
      const std::size_t base = done.seq * cap;
      for (std::size_t j = 0; j < sums.size(); ++j)
        model_.params()[indices[base + j]] -=
            static_cast<double>(sums[j]) /
            (static_cast<double>(clients_) * cfg.scale);
    }
  }

  DatasetPair data_;
  std::vector<ClientData> shards_;
  MlpModel model_;
  AlgoConfig algo_;
  RatePlan plan_;
  std::size_t memory_budget_;
  std::uint64_t seed_;
  int clients_;
  std::size_t dim_;

  std::vector<Residual> residuals_;
  int round_ = 0;
  int fediac_a_ = 1;
  int fediac_bits_ = 12;
  double fixed_m_ = 0.0;
  std::optional<PowerLawFit> fit_;
};

}  // namespace fediac
