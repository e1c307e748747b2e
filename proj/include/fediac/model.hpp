#pragma once

// Two-layer tanh classifier with a softmax cross-entropy loss. Parameters
// live in one flat vector (layer 1 weights row-major, layer 1 bias, layer 2
// weights row-major, layer 2 bias) so model updates are plain dense vectors.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "fediac/dataset.hpp"
#include "fediac/rng.hpp"

namespace fediac {

struct MlpConfig {
  int input = 64;
  int hidden = 128;
  int classes = 10;
};

class MlpModel {
 public:
  explicit MlpModel(MlpConfig cfg) : cfg_(cfg), w_(param_count(cfg), 0.0) {}

  static std::size_t param_count(const MlpConfig& cfg) {
    return static_cast<std::size_t>(cfg.hidden) * cfg.input + cfg.hidden +
           static_cast<std::size_t>(cfg.classes) * cfg.hidden + cfg.classes;
  }

  const MlpConfig& config() const { return cfg_; }
  std::vector<double>& params() { return w_; }
  const std::vector<double>& params() const { return w_; }

  void init_xavier(Rng& rng) {
    const double s1 = std::sqrt(6.0 / (cfg_.input + cfg_.hidden));
    const double s2 = std::sqrt(6.0 / (cfg_.hidden + cfg_.classes));
    std::size_t p = 0;
    for (int j = 0; j < cfg_.hidden * cfg_.input; ++j)
      w_[p++] = uniform_range(rng, -s1, s1);
    for (int j = 0; j < cfg_.hidden; ++j) w_[p++] = 0.0;
    for (int j = 0; j < cfg_.classes * cfg_.hidden; ++j)
      w_[p++] = uniform_range(rng, -s2, s2);
    for (int j = 0; j < cfg_.classes; ++j) w_[p++] = 0.0;
  }

  // Mean cross-entropy over the given sample indices.
  double loss(const Dataset& data, std::span<const int> idx) const {
    double total = 0.0;
    std::vector<double> h(static_cast<std::size_t>(cfg_.hidden));
    std::vector<double> z(static_cast<std::size_t>(cfg_.classes));
    for (int i : idx) {
      forward(data.x[static_cast<std::size_t>(i)], h, z);
      total -= log_softmax_at(z, data.y[static_cast<std::size_t>(i)]);
    }
    return total / static_cast<double>(idx.size());
  }

  // Mean loss and mean gradient (accumulated into grad, resized to fit).
  double gradient(const Dataset& data, std::span<const int> idx,
                  std::vector<double>& grad) const {
    grad.assign(w_.size(), 0.0);
    const int in = cfg_.input, hid = cfg_.hidden, cls = cfg_.classes;
    const std::size_t ow1 = 0;
    const std::size_t ob1 = static_cast<std::size_t>(hid) * in;
    const std::size_t ow2 = ob1 + static_cast<std::size_t>(hid);
    const std::size_t ob2 = ow2 + static_cast<std::size_t>(cls) * hid;

    double total = 0.0;
    std::vector<double> h(static_cast<std::size_t>(hid));
    std::vector<double> z(static_cast<std::size_t>(cls));
    std::vector<double> dh(static_cast<std::size_t>(hid));
    for (int i : idx) {
      const std::vector<double>& x = data.x[static_cast<std::size_t>(i)];
      forward(x, h, z);
      const int label = data.y[static_cast<std::size_t>(i)];

      double zmax = z[0];
      for (double v : z) zmax = std::max(zmax, v);
      double sum = 0.0;
      for (double v : z) sum += std::exp(v - zmax);
      total -= z[static_cast<std::size_t>(label)] - zmax - std::log(sum);

      std::fill(dh.begin(), dh.end(), 0.0);
      for (int c = 0; c < cls; ++c) {
        const double p = std::exp(z[static_cast<std::size_t>(c)] - zmax) / sum;
        const double dz = p - (c == label ? 1.0 : 0.0);
        const double* w2row =
            w_.data() + ow2 + static_cast<std::size_t>(c) * hid;
        double* g2row = grad.data() + ow2 + static_cast<std::size_t>(c) * hid;
        for (int j = 0; j < hid; ++j) {
          g2row[j] += dz * h[static_cast<std::size_t>(j)];
          dh[static_cast<std::size_t>(j)] += dz * w2row[j];
        }
        grad[ob2 + static_cast<std::size_t>(c)] += dz;
      }
      for (int j = 0; j < hid; ++j) {
        const double hj = h[static_cast<std::size_t>(j)];
        const double da = dh[static_cast<std::size_t>(j)] * (1.0 - hj * hj);
        double* g1row = grad.data() + ow1 + static_cast<std::size_t>(j) * in;
        for (int i2 = 0; i2 < in; ++i2)
          g1row[i2] += da * x[static_cast<std::size_t>(i2)];
        grad[ob1 + static_cast<std::size_t>(j)] += da;
      }
    }
    const double scale = 1.0 / static_cast<double>(idx.size());
    for (double& g : grad) g *= scale;
    return total * scale;
  }

  double accuracy(const Dataset& data) const {
    std::size_t correct = 0;
    std::vector<double> h(static_cast<std::size_t>(cfg_.hidden));
    std::vector<double> z(static_cast<std::size_t>(cfg_.classes));
    for (std::size_t i = 0; i < data.size(); ++i) {
      forward(data.x[i], h, z);
      int best = 0;
      for (int c = 1; c < cfg_.classes; ++c)
        if (z[static_cast<std::size_t>(c)] > z[static_cast<std::size_t>(best)])
          best = c;
      correct += best == data.y[i];
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
  }

 private:
  void forward(const std::vector<double>& x, std::vector<double>& h,
               std::vector<double>& z) const {
    const int in = cfg_.input, hid = cfg_.hidden, cls = cfg_.classes;
    const std::size_t ob1 = static_cast<std::size_t>(hid) * in;
    const std::size_t ow2 = ob1 + static_cast<std::size_t>(hid);
    const std::size_t ob2 = ow2 + static_cast<std::size_t>(cls) * hid;
    for (int j = 0; j < hid; ++j) {
      const double* row = w_.data() + static_cast<std::size_t>(j) * in;
      double acc = w_[ob1 + static_cast<std::size_t>(j)];
      for (int i = 0; i < in; ++i) acc += row[i] * x[static_cast<std::size_t>(i)];
      h[static_cast<std::size_t>(j)] = std::tanh(acc);
    }
    for (int c = 0; c < cls; ++c) {
      const double* row = w_.data() + ow2 + static_cast<std::size_t>(c) * hid;
      double acc = w_[ob2 + static_cast<std::size_t>(c)];
      for (int j = 0; j < hid; ++j) acc += row[j] * h[static_cast<std::size_t>(j)];
      z[static_cast<std::size_t>(c)] = acc;
    }
  }

  double log_softmax_at(const std::vector<double>& z, int label) const {
    double zmax = z[0];
    for (double v : z) zmax = std::max(zmax, v);
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    return z[static_cast<std::size_t>(label)] - zmax - std::log(sum);
  }

  MlpConfig cfg_;
  std::vector<double> w_;
};

}  // namespace fediac
