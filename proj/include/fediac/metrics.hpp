#pragma once

// Metrics rows and their CSV form. The first nine columns are the stable
// schema every consumer relies on; the trailing four break the simulated
// round time into stages.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fediac {

struct MetricsRow {
  std::uint64_t seed = 0;
  int iteration = 0;
  double sim_seconds = 0.0;       // cumulative
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  std::uint64_t upload_bytes = 0;    // cumulative
  std::uint64_t download_bytes = 0;  // cumulative
  std::uint64_t agg_count = 0;       // cumulative switch packet folds
  double gia_density = 0.0;
  double t_train = 0.0, t_phase1 = 0.0, t_phase2 = 0.0, t_down = 0.0;
};

inline constexpr const char* kCsvHeader =
    "seed,iteration,sim_seconds,train_loss,test_accuracy,upload_bytes,"
    "download_bytes,agg_count,gia_density,t_train,t_phase1,t_phase2,t_down";

inline std::string to_csv_line(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%llu,%d,%.9g,%.9g,%.9g,%llu,%llu,%llu,%.9g,%.9g,%.9g,%.9g,"
                "%.9g",
                static_cast<unsigned long long>(r.seed), r.iteration,
                r.sim_seconds, r.train_loss, r.test_accuracy,
                static_cast<unsigned long long>(r.upload_bytes),
                static_cast<unsigned long long>(r.download_bytes),
                static_cast<unsigned long long>(r.agg_count), r.gia_density,
                r.t_train, r.t_phase1, r.t_phase2, r.t_down);
  return buf;
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

}  // namespace detail

// Reads a metrics CSV, validating that the stable nine-column prefix is
// present; the error names every missing column.
inline std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file: " + path);
  std::string header;
  if (!std::getline(in, header))
    throw std::runtime_error(path + ": empty file");
  if (!header.empty() && header.back() == '\r') header.pop_back();

  const std::vector<std::string> want = detail::split_csv(kCsvHeader);
  const std::vector<std::string> have = detail::split_csv(header);
  std::string missing;
  for (std::size_t i = 0; i < 9; ++i) {
    if (i >= have.size() || have[i] != want[i]) {
      if (!missing.empty()) missing += ", ";
      missing += want[i];
    }
  }
  if (!missing.empty())
    throw std::runtime_error(path + ": schema mismatch, missing columns: " +
                             missing);

  std::vector<MetricsRow> rows;
  std::string line;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> f = detail::split_csv(line);
    if (f.size() < 9)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": short row");
    MetricsRow r;
    r.seed = std::stoull(f[0]);
    r.iteration = std::stoi(f[1]);
    r.sim_seconds = std::stod(f[2]);
    r.train_loss = std::stod(f[3]);
    r.test_accuracy = std::stod(f[4]);
    r.upload_bytes = std::stoull(f[5]);
    r.download_bytes = std::stoull(f[6]);
    r.agg_count = std::stoull(f[7]);
    r.gia_density = std::stod(f[8]);
    if (f.size() >= 13) {
      r.t_train = std::stod(f[9]);
      r.t_phase1 = std::stod(f[10]);
      r.t_phase2 = std::stod(f[11]);
      r.t_down = std::stod(f[12]);
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace fediac
