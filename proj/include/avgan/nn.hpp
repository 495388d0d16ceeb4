#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "avgan/kernels.hpp"
#include "avgan/tensor.hpp"

namespace avgan {

using Rng = std::mt19937_64;

/// Ordered, named collection of parameter tensors owned by one network.
class ParamStore {
 public:
  Tensor add(std::string name, Shape shape, std::vector<double> values);
  Tensor get(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  std::size_t scalar_count() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Uniform integer in [0, n). Modulo bias is negligible for 64-bit draws.
inline std::size_t uniform_index(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

/// k distinct indices from [0, n) in random order (partial Fisher-Yates).
std::vector<int> sample_without_replacement(Rng& rng, int n, int k);

/// Draws N(0, stddev^2) values.
std::vector<double> normal_values(Rng& rng, std::size_t n, double stddev);

struct Conv2d {
  Tensor weight;  // out x in x k x k
  Tensor bias;    // out, may be undefined
  int stride = 1;
  int padding = 0;

  Tensor operator()(const Tensor& x) const;
};

Conv2d make_conv(ParamStore& store, const std::string& name, int in_channels, int out_channels,
                 int kernel, int stride, int padding, Rng& rng, bool with_bias = true,
                 double init_std = 0.02);

/// Column-wise affine map: x is in x K, result out x K.
struct Linear {
  Tensor weight;  // out x in
  Tensor bias;    // out

  Tensor operator()(const Tensor& x) const;
};

Linear make_linear(ParamStore& store, const std::string& name, int in_features, int out_features,
                   Rng& rng, double init_std = 0.02);

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);

  void zero_grad();
  /// Parameters that received no gradient are updated with a zero gradient.
  void step();

  std::int64_t steps_taken() const { return steps_; }
  const std::vector<Tensor>& params() const { return params_; }

  // Moment buffers, exposed for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_steps_taken(std::int64_t s) { steps_ = s; }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::int64_t steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace avgan
