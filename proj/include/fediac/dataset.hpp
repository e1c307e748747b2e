#pragma once

// Synthetic Gaussian-cluster classification data and the Dirichlet label
// partition that controls client heterogeneity.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "fediac/rng.hpp"

namespace fediac {

struct Dataset {
  int dim = 0;
  int classes = 0;
  std::vector<std::vector<double>> x;
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
};

namespace detail {

inline std::vector<double> unit_direction(int dim, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& c : v) {
      c = normal(rng, 0.0, 1.0);
      norm += c * c;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& c : v) c /= norm;
  return v;
}

inline void fill_samples(Dataset& out, const std::vector<std::vector<double>>& means,
                         int per_class, double noise, Rng& rng) {
  for (int c = 0; c < out.classes; ++c) {
    for (int s = 0; s < per_class; ++s) {
      std::vector<double> x(static_cast<std::size_t>(out.dim));
      for (int i = 0; i < out.dim; ++i)
        x[static_cast<std::size_t>(i)] =
            means[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)] +
            normal(rng, 0.0, noise);
      out.x.push_back(std::move(x));
      out.y.push_back(c);
    }
  }
}

}  // namespace detail

// Train and test splits share the same class means.
struct DatasetPair {
  Dataset train;
  Dataset test;
};

inline DatasetPair make_synthetic(int classes, int dim, int train_per_class,
                                  int test_per_class, double separation,
                                  double noise, Rng& rng) {
  if (classes < 2 || dim < 1 || train_per_class < 1 || test_per_class < 1)
    throw std::invalid_argument("degenerate synthetic dataset shape");
  std::vector<std::vector<double>> means;
  for (int c = 0; c < classes; ++c) {
    std::vector<double> m = detail::unit_direction(dim, rng);
    for (double& v : m) v *= separation;
    means.push_back(std::move(m));
  }
  DatasetPair pair;
  pair.train.dim = pair.test.dim = dim;
  pair.train.classes = pair.test.classes = classes;
  detail::fill_samples(pair.train, means, train_per_class, noise, rng);
  detail::fill_samples(pair.test, means, test_per_class, noise, rng);
  return pair;
}

struct ClientData {
  std::vector<int> indices;          // into the dataset
  std::vector<int> label_histogram;  // one bucket per class
};

// For each label, a Dirichlet(beta, ..., beta) draw apportions that label's
// samples across clients. Shards are disjoint and cover the dataset; a
// partition that leaves any client empty is re-rolled, and after too many
// attempts single samples are moved from the largest shards.
inline std::vector<ClientData> dirichlet_partition(const Dataset& data, int N,
                                                   double beta, Rng& rng) {
  if (N < 1) throw std::invalid_argument("need at least one client");
  if (!(beta > 0.0))
    throw std::invalid_argument("Dirichlet beta must be positive");

  std::vector<std::vector<int>> by_label(
      static_cast<std::size_t>(data.classes));
  for (std::size_t i = 0; i < data.size(); ++i)
    by_label[static_cast<std::size_t>(data.y[i])].push_back(
        static_cast<int>(i));

  std::vector<ClientData> shards;
  for (int attempt = 0; attempt < 100; ++attempt) {
    shards.assign(static_cast<std::size_t>(N), ClientData{});
    for (auto& s : shards)
      s.label_histogram.assign(static_cast<std::size_t>(data.classes), 0);

    for (int label = 0; label < data.classes; ++label) {
      std::vector<int> pool = by_label[static_cast<std::size_t>(label)];
      for (std::size_t i = pool.size(); i > 1; --i)
        std::swap(pool[i - 1],
                  pool[static_cast<std::size_t>(uniform01(rng) * i)]);

      std::vector<double> weights(static_cast<std::size_t>(N));
      double total = 0.0;
      do {
        total = 0.0;
        for (double& w : weights) {
          w = gamma_sample(rng, beta);
          total += w;
        }
      } while (total == 0.0);

      // Cumulative rounding keeps the split exact.
      double cum = 0.0;
      std::size_t taken = 0;
      for (int c = 0; c < N; ++c) {
        cum += weights[static_cast<std::size_t>(c)] / total;
        const std::size_t upto = c + 1 == N
                                     ? pool.size()
                                     : std::min(pool.size(),
                                                static_cast<std::size_t>(
                                                    std::llround(
                                                        cum * pool.size())));
        for (; taken < upto; ++taken) {
          shards[static_cast<std::size_t>(c)].indices.push_back(pool[taken]);
          ++shards[static_cast<std::size_t>(c)]
                .label_histogram[static_cast<std::size_t>(label)];
        }
      }
    }

    const bool any_empty =
        std::any_of(shards.begin(), shards.end(),
                    [](const ClientData& s) { return s.indices.empty(); });
    if (!any_empty) return shards;
  }

  // Safety net: move one sample from the largest shard into each empty one.
  for (auto& empty : shards) {
    if (!empty.indices.empty()) continue;
    auto largest = std::max_element(
        shards.begin(), shards.end(),
        [](const ClientData& a, const ClientData& b) {
          return a.indices.size() < b.indices.size();
        });
    const int idx = largest->indices.back();
    largest->indices.pop_back();
    --largest->label_histogram[static_cast<std::size_t>(data.y[
        static_cast<std::size_t>(idx)])];
    empty.indices.push_back(idx);
    ++empty.label_histogram[static_cast<std::size_t>(data.y[
        static_cast<std::size_t>(idx)])];
  }
  return shards;
}

}  // namespace fediac
