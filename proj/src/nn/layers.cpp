#include <stdexcept>

#include "avgan/error.hpp"
#include "avgan/nn.hpp"
#include "avgan/ops.hpp"

namespace avgan {

Tensor ParamStore::add(std::string name, Shape shape, std::vector<double> values) {
  for (const auto& [existing, _] : entries_) {
    if (existing == name) throw InvalidInput("duplicate parameter name " + name);
  }
  Tensor t = Tensor::parameter(std::move(shape), std::move(values));
  entries_.emplace_back(std::move(name), t);
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw InvalidInput("unknown parameter " + name);
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [_, t] : entries_) out.push_back(t);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

std::vector<int> sample_without_replacement(Rng& rng, int n, int k) {
  if (k < 0 || k > n) throw InvalidInput("cannot sample " + std::to_string(k) + " of " + std::to_string(n));
  std::vector<int> pool(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < k; ++i) {
    const std::size_t j = static_cast<std::size_t>(i) + uniform_index(rng, static_cast<std::size_t>(n - i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }
  pool.resize(static_cast<std::size_t>(k));
  return pool;
}

std::vector<double> normal_values(Rng& rng, std::size_t n, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> out(n);
  for (double& v : out) v = dist(rng);
  return out;
}

Tensor Conv2d::operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }

Conv2d make_conv(ParamStore& store, const std::string& name, int in_channels, int out_channels,
                 int kernel, int stride, int padding, Rng& rng, bool with_bias, double init_std) {
  Conv2d conv;
  const Shape shape{out_channels, in_channels, kernel, kernel};
  conv.weight = store.add(name + ".weight", shape, normal_values(rng, shape_numel(shape), init_std));
  if (with_bias) {
    conv.bias = store.add(name + ".bias", Shape{out_channels},
                          std::vector<double>(static_cast<std::size_t>(out_channels), 0.0));
  }
  conv.stride = stride;
  conv.padding = padding;
  return conv;
}

Tensor Linear::operator()(const Tensor& x) const { return add_row_bias(matmul(weight, x), bias); }

Linear make_linear(ParamStore& store, const std::string& name, int in_features, int out_features,
                   Rng& rng, double init_std) {
  Linear lin;
  const Shape shape{out_features, in_features};
  lin.weight = store.add(name + ".weight", shape, normal_values(rng, shape_numel(shape), init_std));
  lin.bias = store.add(name + ".bias", Shape{out_features},
                       std::vector<double>(static_cast<std::size_t>(out_features), 0.0));
  return lin;
}

}  // namespace avgan
