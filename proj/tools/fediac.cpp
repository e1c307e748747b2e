// Experiment runner CLI: seeded grids to CSV, comparison tables, and the
// probability-pipeline report for a file of magnitudes.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fediac/config.hpp"
#include "fediac/experiment.hpp"

namespace {

std::vector<double> read_magnitudes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open updates file: " + path);
  std::vector<double> values;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const std::size_t e = line.find_last_not_of(" \t\r");
    const std::string tok = line.substr(b, e - b + 1);
    try {
      values.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": not a number: '" + tok + "'");
    }
  }
  if (values.empty()) throw std::runtime_error(path + ": no values");
  return values;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"In-network federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  CLI::App* run = app.add_subcommand("run", "run an experiment grid");
  run->add_option("--config", config_path, "key=value configuration file")
      ->required();
  run->add_option("--out", out_dir, "output directory for CSVs and summary")
      ->required();

  std::vector<std::string> csv_paths;
  double target = -1.0;
  CLI::App* compare = app.add_subcommand(
      "compare", "summarize metrics CSVs; the first file is the reference");
  compare->add_option("csvs", csv_paths, "metrics CSV files")
      ->required()
      ->expected(-1);
  compare->add_option("--target", target,
                      "accuracy target for traffic-to-target accounting");

  std::string updates_path;
  int clients = 20, draws = 0, threshold = 3;
  double max_mag = 0.0;
  CLI::App* analyze = app.add_subcommand(
      "analyze", "dump p_l/q_l/r_l, expected uploads, min bits and gamma "
                 "for a magnitude file (one value per line)");
  analyze->add_option("--updates", updates_path, "magnitude file")->required();
  analyze->add_option("--clients", clients, "client count N");
  analyze->add_option("--votes", draws, "draws per client (default 5% of d)");
  analyze->add_option("--threshold", threshold, "vote threshold a");
  analyze->add_option("--max-mag", max_mag,
                      "scale reference m (default: largest magnitude)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      const fediac::ExperimentConfig cfg =
          fediac::parse_config_file(config_path);
      fediac::run_experiment(cfg, out_dir);
      std::cout << "wrote " << cfg.algorithms.size() * cfg.seeds.size()
                << " CSV file(s) and summary.txt to " << out_dir << "\n";
    } else if (compare->parsed()) {
      std::cout << fediac::compare_csvs(csv_paths, target);
    } else if (analyze->parsed()) {
      const std::vector<double> mags = read_magnitudes(updates_path);
      if (draws <= 0)
        draws = std::max(1, static_cast<int>(mags.size() / 20));
      std::cout << fediac::analyze_report(mags, clients, draws, threshold,
                                          max_mag);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
