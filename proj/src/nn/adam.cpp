#include <cmath>

#include "avgan/error.hpp"
#include "avgan/nn.hpp"

namespace avgan {

Adam::Adam(std::vector<Tensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0.0)) throw InvalidInput("learning rate must be positive");
  if (!(config_.beta1 > 0.0 && config_.beta1 < 1.0) || !(config_.beta2 > 0.0 && config_.beta2 < 1.0)) {
    throw InvalidInput("Adam betas must lie in (0, 1)");
  }
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void Adam::step() {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const kernels::AdamStep s{config_.lr, config_.beta1, config_.beta2, config_.eps,
                            1.0 - std::pow(config_.beta1, t), 1.0 - std::pow(config_.beta2, t)};
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    std::span<double> grad = p.mutable_grad();
    kernels::adam_update(p.mutable_data(), grad, m_[i], v_[i], s);
  }
}

}  // namespace avgan
