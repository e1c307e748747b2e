#pragma once

// Experiment cells, the seeded grid runner and the reporting commands.
// Each (algorithm, seed) cell is fully isolated and deterministic, so cells
// can run on a worker pool without changing any output byte.

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "fediac/config.hpp"
#include "fediac/fltrain.hpp"
#include "fediac/metrics.hpp"

namespace fediac {

struct CellResult {
  Algorithm algorithm = Algorithm::kDense;
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;
};

namespace detail {

inline std::uint64_t tag(const char* s) {
  std::uint64_t h = 1469598103934665603ull;
  for (; *s; ++s) h = (h ^ static_cast<std::uint64_t>(*s)) * 1099511628211ull;
  return h;
}

inline std::vector<double> cell_rates(const ExperimentConfig& cfg,
                                      std::uint64_t seed) {
  if (!cfg.trace_path.empty())
    return assign_rates(load_trace(cfg.trace_path), cfg.clients);
  Rng rng = make_rng(seed, {tag("rates")});
  std::vector<double> rates(static_cast<std::size_t>(cfg.clients));
  for (double& r : rates)
    r = std::floor(uniform_range(rng, cfg.rate_min, cfg.rate_max));
  return rates;
}

}  // namespace detail

// The dataset, partition and rate plan are functions of the seed alone, so
// every algorithm sees identical data and timing conditions at equal seeds.
inline Trainer make_trainer(const ExperimentConfig& cfg, Algorithm algorithm,
                            std::uint64_t seed) {
  Rng data_rng = make_rng(seed, {detail::tag("data")});
  DatasetPair data =
      make_synthetic(cfg.data_classes, cfg.data_dim, cfg.train_per_class,
                     cfg.test_per_class, cfg.separation, cfg.noise, data_rng);
  Rng part_rng = make_rng(seed, {detail::tag("partition")});
  std::vector<ClientData> shards =
      dirichlet_partition(data.train, cfg.clients, cfg.beta, part_rng);

  RatePlan plan =
      make_rate_plan(detail::cell_rates(cfg, seed), cfg.switch_kind,
                     cfg.train_delay, cfg.download_multiplier);

  MlpConfig model_cfg{cfg.data_dim, cfg.hidden, cfg.data_classes};
  AlgoConfig algo = cfg.algo;
  algo.algorithm = algorithm;
  return Trainer(std::move(data), std::move(shards), model_cfg, algo, plan,
                 cfg.memory_budget, seed);
}

inline CellResult run_cell(const ExperimentConfig& cfg, Algorithm algorithm,
                           std::uint64_t seed) {
  Trainer trainer = make_trainer(cfg, algorithm, seed);
  CellResult result;
  result.algorithm = algorithm;
  result.seed = seed;

  double clock = 0.0;
  std::uint64_t up = 0, down = 0, folds = 0;
  for (int t = 1; t <= cfg.rounds; ++t) {
    const RoundMetrics m = trainer.run_round();
    clock += m.sim_seconds;
    up += m.upload_bytes;
    down += m.download_bytes;
    folds += m.agg_count;

    MetricsRow row;
    row.seed = seed;
    row.iteration = t;
    row.sim_seconds = clock;
    row.train_loss = trainer.train_loss_sample();
    row.test_accuracy = trainer.test_accuracy();
    row.upload_bytes = up;
    row.download_bytes = down;
    row.agg_count = folds;
    row.gia_density = m.gia_density;
    row.t_train = m.t_train;
    row.t_phase1 = m.t_phase1;
    row.t_phase2 = m.t_phase2;
    row.t_down = m.t_down;
    result.rows.push_back(row);

    if (cfg.time_budget_s > 0.0 && clock >= cfg.time_budget_s) break;
  }
  return result;
}

inline std::string cell_csv_name(Algorithm algorithm, std::uint64_t seed) {
  return std::string(algorithm_name(algorithm)) + "_seed" +
         std::to_string(seed) + ".csv";
}

inline void write_cell_csv(const CellResult& cell, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << kCsvHeader << "\n";
  for (const MetricsRow& row : cell.rows) out << to_csv_line(row) << "\n";
}

// First iteration whose accuracy reaches the target; total traffic there.
inline std::optional<std::uint64_t> traffic_to_target(
    const std::vector<MetricsRow>& rows, double target) {
  for (const MetricsRow& r : rows)
    if (r.test_accuracy >= target) return r.upload_bytes + r.download_bytes;
  return std::nullopt;
}

inline int worker_count() {
  if (const char* env = std::getenv("FEDIAC_WORKERS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs the whole (algorithm, seed) grid, writes one CSV per cell plus a
// summary table. Outputs are byte-identical across reruns and worker counts.
inline void run_experiment(const ExperimentConfig& cfg,
                           const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  struct Cell {
    Algorithm algorithm;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (Algorithm a : cfg.algorithms)
    for (std::uint64_t s : cfg.seeds) cells.push_back({a, s});

  std::vector<CellResult> results(cells.size());
  std::vector<std::string> errors(cells.size());
  std::atomic<std::size_t> next{0};
  const int workers =
      std::min<int>(worker_count(), static_cast<int>(cells.size()));

  const auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      try {
        results[i] = run_cell(cfg, cells[i].algorithm, cells[i].seed);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (std::thread& th : pool) th.join();
  }

  for (std::size_t i = 0; i < cells.size(); ++i)
    if (!errors[i].empty())
      throw std::runtime_error(std::string(algorithm_name(cells[i].algorithm)) +
                               " seed " + std::to_string(cells[i].seed) +
                               ": " + errors[i]);

  for (const CellResult& cell : results)
    write_cell_csv(cell,
                   (fs::path(out_dir) /
                    cell_csv_name(cell.algorithm, cell.seed)).string());

  std::ofstream summary(fs::path(out_dir) / "summary.txt", std::ios::binary);
  summary << "algorithm,seed,rounds,sim_seconds,final_accuracy,"
             "total_traffic_bytes,traffic_to_target_bytes\n";
  char buf[256];
  for (const CellResult& cell : results) {
    if (cell.rows.empty()) continue;
    const MetricsRow& last = cell.rows.back();
    std::string to_target = "n/a";
    if (cfg.target_accuracy >= 0.0) {
      const auto traffic = traffic_to_target(cell.rows, cfg.target_accuracy);
      to_target = traffic ? std::to_string(*traffic) : "unreached";
    }
    std::snprintf(buf, sizeof(buf), "%s,%llu,%d,%.9g,%.9g,%llu,%s\n",
                  algorithm_name(cell.algorithm),
                  static_cast<unsigned long long>(cell.seed), last.iteration,
                  last.sim_seconds, last.test_accuracy,
                  static_cast<unsigned long long>(last.upload_bytes +
                                                  last.download_bytes),
                  to_target.c_str());
    summary << buf;
  }
}

// Comparison table over metrics CSVs. The first file is the reference; the
// reduction column is (1 - reference/other) * 100, the fraction of the other
// scheme's traffic the reference saves.
inline std::string compare_csvs(const std::vector<std::string>& paths,
                                double target = -1.0) {
  if (paths.empty()) throw std::invalid_argument("no CSV files given");
  struct Entry {
    std::string name;
    double final_accuracy = 0.0;
    std::uint64_t total_traffic = 0;
    std::optional<std::uint64_t> to_target;
  };
  std::vector<Entry> entries;
  for (const std::string& path : paths) {
    const std::vector<MetricsRow> rows = read_metrics_csv(path);
    if (rows.empty()) throw std::runtime_error(path + ": no data rows");
    Entry e;
    e.name = std::filesystem::path(path).filename().string();
    e.final_accuracy = rows.back().test_accuracy;
    e.total_traffic = rows.back().upload_bytes + rows.back().download_bytes;
    if (target >= 0.0) e.to_target = traffic_to_target(rows, target);
    entries.push_back(std::move(e));
  }

  const bool with_reduction = entries.size() > 1;
  std::string out = "file,final_accuracy,total_traffic_bytes";
  if (target >= 0.0) out += ",traffic_to_target_bytes";
  if (with_reduction) out += ",reduced_pct";
  out += "\n";

  const auto traffic_of = [&](const Entry& e) -> std::optional<std::uint64_t> {
    if (target >= 0.0) return e.to_target;
    return e.total_traffic;
  };

  char buf[256];
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Entry& e = entries[i];
    std::snprintf(buf, sizeof(buf), "%s,%.4f,%llu", e.name.c_str(),
                  e.final_accuracy,
                  static_cast<unsigned long long>(e.total_traffic));
    out += buf;
    if (target >= 0.0) {
      out += ",";
      out += e.to_target ? std::to_string(*e.to_target) : "unreached";
    }
    if (with_reduction) {
      if (i == 0) {
        out += ",reference";
      } else {
        const auto ref = traffic_of(entries[0]);
        const auto other = traffic_of(e);
        if (ref && other && *other > 0) {
          const double pct =
              (1.0 - static_cast<double>(*ref) /
                         static_cast<double>(*other)) *
              100.0;
          std::snprintf(buf, sizeof(buf), ",%.2f", pct);
          out += buf;
        } else {
          out += ",n/a";
        }
      }
    }
    out += "\n";
  }
  return out;
}

// Reduction percentage as printed in the comparison table.
inline double reduction_pct(double reference_traffic, double other_traffic) {
  return (1.0 - reference_traffic / other_traffic) * 100.0;
}

// Probability pipeline dump for a file of magnitudes (one per line).
inline std::string analyze_report(const std::vector<double>& magnitudes,
                                  int clients, int draws, int threshold,
                                  double max_mag = 0.0) {
  if (magnitudes.empty()) throw std::invalid_argument("no magnitudes given");
  std::vector<double> sorted;
  sorted.reserve(magnitudes.size());
  for (double v : magnitudes) sorted.push_back(std::abs(v));
  std::sort(sorted.rbegin(), sorted.rend());
  const int d = static_cast<int>(sorted.size());
  if (max_mag <= 0.0) max_mag = sorted.front();

  const PowerLawFit fit = fit_power_law(sorted);
  const std::vector<double> r = upload_probs(d, draws, clients, threshold, fit);
  const int bits = min_bits_from_probs(r, fit, clients, max_mag);
  const QuantConfig cfg = make_quant_config(bits, clients, max_mag);
  const double gamma = gamma_from_probs(r, fit, cfg.scale);
  double e_ks = 0.0;
  for (double x : r) e_ks += x;

  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "# d=%d clients=%d draws=%d threshold=%d max_mag=%.9g\n"
                "# alpha=%.9g phi=%.9g\n"
                "# expected_uploads=%.9g density=%.9g\n"
                "# min_bits=%d scale=%.9g gamma=%.9g\n",
                d, clients, draws, threshold, max_mag, fit.alpha, fit.phi,
                e_ks, e_ks / d, bits, cfg.scale, gamma);
  out += buf;
  out += "l,p_l,q_l,r_l\n";
  double denom = 0.0;
  for (int l = 1; l <= d; ++l) denom += std::pow(l, fit.alpha);
  for (int l = 1; l <= d; ++l) {
    const double p = std::pow(l, fit.alpha) / denom;
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", l, p,
                  vote_prob(p, draws), r[static_cast<std::size_t>(l - 1)]);
    out += buf;
  }
  return out;
}

}  // namespace fediac
