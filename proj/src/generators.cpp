#include "avgan/generators.hpp"

#include "avgan/error.hpp"
#include "avgan/ops.hpp"

namespace avgan {

ResnetGenerator::ResnetGenerator(const GeneratorConfig& config, const std::string& name, Rng& rng)
    : config_(config) {
  if (config.base_channels <= 0 || config.n_residual_blocks < 1 || config.downsample_steps < 1) {
    throw InvalidInput("generator needs positive channels, >= 1 residual block and >= 1 downsampling step");
  }
  const int ngf = config.base_channels;
  stem_ = make_conv(store_, name + ".stem", 3, ngf, 7, 1, 0, rng, false);
  int ch = ngf;
  for (int i = 0; i < config.downsample_steps; ++i) {
    down_.push_back(make_conv(store_, name + ".down" + std::to_string(i), ch, ch * 2, 3, 2, 1, rng, false));
    ch *= 2;
  }
  attention_ = make_conv(store_, name + ".spatial_attention", 2, 1, 7, 1, 3, rng, true);
  for (int i = 0; i < config.n_residual_blocks; ++i) {
    const std::string b = name + ".res" + std::to_string(i);
    blocks_.push_back({make_conv(store_, b + ".conv1", ch, ch, 3, 1, 0, rng, false),
                       make_conv(store_, b + ".conv2", ch, ch, 3, 1, 0, rng, false)});
  }
  for (int i = 0; i < config.downsample_steps; ++i) {
    up_.push_back(make_conv(store_, name + ".up" + std::to_string(i), ch, ch / 2, 3, 1, 0, rng, false));
    ch /= 2;
  }
  head_ = make_conv(store_, name + ".head", ch, 3, 7, 1, 0, rng, true);
}

Tensor ResnetGenerator::spatial_attention(const Tensor& x) const {
  const Tensor pooled = concat_channels({channel_mean(x), channel_max(x)});
  return mul_spatial(x, sigmoid(attention_(pooled)));
}

Tensor ResnetGenerator::run(const Tensor& x, std::vector<Tensor>* features, bool encoder_only) const {
  if (x.rank() != 3 || x.dim(0) != 3) throw InvalidInput("generator expects 3 x H x W, got " + shape_string(x.shape()));
  const int multiple = 1 << config_.downsample_steps;
  if (x.dim(1) % multiple != 0 || x.dim(2) % multiple != 0) {
    throw InvalidInput("generator input " + shape_string(x.shape()) + " not divisible by " + std::to_string(multiple));
  }
  Tensor h = relu(instance_norm(stem_(reflect_pad(x, 3))));
  if (features) features->push_back(h);
  for (const Conv2d& d : down_) {
    h = relu(instance_norm(d(h)));
    if (features) features->push_back(h);
  }
  h = spatial_attention(h);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const ResBlock& b = blocks_[i];
    Tensor r = relu(instance_norm(b.conv1(reflect_pad(h, 1))));
    r = instance_norm(b.conv2(reflect_pad(r, 1)));
    h = add(h, r);
    if (i == 0) {
      if (features) features->push_back(h);
      if (encoder_only) return h;
    }
  }
  for (const Conv2d& u : up_) h = relu(instance_norm(u(reflect_pad(upsample_nearest(h, 2), 1))));
  return sigmoid(head_(reflect_pad(h, 3)));
}

Tensor ResnetGenerator::forward(const Tensor& x) const { return run(x, nullptr, false); }

ResnetGenerator::Output ResnetGenerator::forward_with_features(const Tensor& x) const {
  Output out;
  out.image = run(x, &out.features, false);
  return out;
}

std::vector<Tensor> ResnetGenerator::encode(const Tensor& x) const {
  std::vector<Tensor> features;
  run(x, &features, true);
  return features;
}

std::vector<int> ResnetGenerator::feature_channels() const {
  std::vector<int> ch{config_.base_channels};
  int c = config_.base_channels;
  for (int i = 0; i < config_.downsample_steps; ++i) ch.push_back(c *= 2);
  ch.push_back(c);
  return ch;
}

VarifocalGenerators::VarifocalGenerators(const GeneratorConfig& config, int lowres_size, int region_size, Rng& rng)
    : lowres_size_(lowres_size), region_size_(region_size) {
  g1_ = std::make_shared<ResnetGenerator>(config, "g1", rng);
  g2_ = config.shared_weights ? g1_ : std::make_shared<ResnetGenerator>(config, "g2", rng);
}

void VarifocalGenerators::check(const Tensor& x, int expected, const char* which) const {
  if (x.rank() != 3 || x.dim(0) != 3 || x.dim(1) != expected || x.dim(2) != expected) {
    throw InvalidInput(std::string(which) + " expects 3 x " + std::to_string(expected) + " x " +
                       std::to_string(expected) + ", got " + shape_string(x.shape()));
  }
}

Tensor VarifocalGenerators::g1_forward(const Tensor& resized_patch) const {
  check(resized_patch, lowres_size_, "g1");
  return g1_->forward(resized_patch);
}

ResnetGenerator::Output VarifocalGenerators::g1_forward_with_features(const Tensor& resized_patch) const {
  check(resized_patch, lowres_size_, "g1");
  return g1_->forward_with_features(resized_patch);
}

Tensor VarifocalGenerators::g2_forward(const Tensor& region) const {
  check(region, region_size_, "g2");
  return g2_->forward(region);
}

std::vector<Tensor> VarifocalGenerators::parameters() const {
  std::vector<Tensor> out = g1_->params().tensors();
  if (!shared()) {
    for (const Tensor& t : g2_->params().tensors()) out.push_back(t);
  }
  return out;
}

}  // namespace avgan
