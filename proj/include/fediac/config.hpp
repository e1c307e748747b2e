#pragma once

// Flat key=value experiment configuration. '#' starts a comment, every key
// has a default, unknown keys are rejected by name.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fediac/fltrain.hpp"
#include "fediac/netsim.hpp"

namespace fediac {

struct ExperimentConfig {
  std::vector<Algorithm> algorithms{Algorithm::kFediAC};
  std::vector<std::uint64_t> seeds{1};
  int clients = 20;
  double beta = 0.5;

  AlgoConfig algo;

  SwitchKind switch_kind = SwitchKind::kHigh;
  std::size_t memory_budget = 1u << 20;
  std::string trace_path;  // empty: synthetic rates in [rate_min, rate_max]
  double rate_min = 200.0;
  double rate_max = 2800.0;
  double download_multiplier = kDefaultDownloadMultiplier;
  double train_delay = 0.1;

  int rounds = 50;
  double time_budget_s = 0.0;    // simulated seconds; 0 disables the cap
  double target_accuracy = -1.0; // < 0: no target in the summary

  int data_dim = 64;
  int data_classes = 10;
  int train_per_class = 400;
  int test_per_class = 50;
  double separation = 4.0;
  double noise = 1.0;
  int hidden = 128;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key +
                                "': not a number: '" + value + "'");
  }
}

inline long long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key +
                                "': not an integer: '" + value + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config key '" + key +
                              "': expected true/false, got '" + value + "'");
}

}  // namespace detail

inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));

    if (key == "algorithm") {
      cfg.algorithms.clear();
      for (const std::string& name : detail::split_list(value))
        cfg.algorithms.push_back(parse_algorithm(name));
      if (cfg.algorithms.empty())
        throw std::invalid_argument("config key 'algorithm': empty list");
    } else if (key == "seeds") {
      cfg.seeds.clear();
      for (const std::string& s : detail::split_list(value))
        cfg.seeds.push_back(
            static_cast<std::uint64_t>(detail::parse_int(key, s)));
      if (cfg.seeds.empty())
        throw std::invalid_argument("config key 'seeds': empty list");
    } else if (key == "clients") {
      cfg.clients = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "beta") {
      cfg.beta = detail::parse_double(key, value);
    } else if (key == "local_iters") {
      cfg.algo.local_iters = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "batch") {
      cfg.algo.batch = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "lr0") {
      cfg.algo.lr0 = detail::parse_double(key, value);
    } else if (key == "lr_s") {
      cfg.algo.lr_s = detail::parse_double(key, value);
    } else if (key == "k_frac") {
      cfg.algo.k_frac = detail::parse_double(key, value);
    } else if (key == "a") {
      cfg.algo.threshold_a = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "bits") {
      cfg.algo.quant_bits = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "bootstrap") {
      cfg.algo.bootstrap = detail::parse_bool(key, value);
    } else if (key == "traffic_budget") {
      cfg.algo.traffic_budget = detail::parse_double(key, value);
    } else if (key == "topk_frac") {
      cfg.algo.topk_frac = detail::parse_double(key, value);
    } else if (key == "fixed_m") {
      cfg.algo.fixed_max_mag = detail::parse_bool(key, value);
    } else if (key == "switch") {
      if (value == "high") cfg.switch_kind = SwitchKind::kHigh;
      else if (value == "low") cfg.switch_kind = SwitchKind::kLow;
      else
        throw std::invalid_argument(
            "config key 'switch': expected high or low, got '" + value + "'");
    } else if (key == "memory_budget") {
      cfg.memory_budget =
          static_cast<std::size_t>(detail::parse_int(key, value));
    } else if (key == "trace") {
      cfg.trace_path = value;
    } else if (key == "rate_min") {
      cfg.rate_min = detail::parse_double(key, value);
    } else if (key == "rate_max") {
      cfg.rate_max = detail::parse_double(key, value);
    } else if (key == "download_multiplier") {
      cfg.download_multiplier = detail::parse_double(key, value);
    } else if (key == "train_delay") {
      cfg.train_delay = detail::parse_double(key, value);
    } else if (key == "rounds") {
      cfg.rounds = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "time_budget") {
      cfg.time_budget_s = detail::parse_double(key, value);
    } else if (key == "target_accuracy") {
      cfg.target_accuracy = detail::parse_double(key, value);
    } else if (key == "dim") {
      cfg.data_dim = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "classes") {
      cfg.data_classes = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "train_per_class") {
      cfg.train_per_class = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "test_per_class") {
      cfg.test_per_class = static_cast<int>(detail::parse_int(key, value));
    } else if (key == "separation") {
      cfg.separation = detail::parse_double(key, value);
    } else if (key == "noise") {
      cfg.noise = detail::parse_double(key, value);
    } else if (key == "hidden") {
      cfg.hidden = static_cast<int>(detail::parse_int(key, value));
    } else {
      throw std::invalid_argument("unknown config key: '" + key + "'");
    }
  }
  return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

}  // namespace fediac
