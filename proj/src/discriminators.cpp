#include "avgan/discriminators.hpp"

#include <algorithm>

#include "avgan/error.hpp"
#include "avgan/ops.hpp"

namespace avgan {

PatchDiscriminator::PatchDiscriminator(const DiscriminatorConfig& config, const std::string& name, Rng& rng)
    : config_(config) {
  if (config.base_channels <= 0 || config.stride2_layers < 1) {
    throw InvalidInput("discriminator needs positive channels and >= 1 stride-2 layer");
  }
  const int ndf = config.base_channels;
  const int cap = 8 * ndf;
  int in = 3;
  int out = ndf;
  for (int i = 0; i < config.stride2_layers; ++i) {
    layers_.push_back(make_conv(store_, name + ".conv" + std::to_string(i), in, out, 4, 2, 1, rng, i == 0));
    in = out;
    out = std::min(out * 2, cap);
  }
  layers_.push_back(make_conv(store_, name + ".conv" + std::to_string(config.stride2_layers), in, out, 4, 1, 1, rng, false));
  layers_.push_back(make_conv(store_, name + ".logits", out, 1, 4, 1, 1, rng, true));
}

Tensor PatchDiscriminator::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    h = layers_[i](h);
    if (i > 0) h = instance_norm(h);
    h = leaky_relu(h, 0.2);
  }
  return layers_.back()(h);
}

int PatchDiscriminator::output_side(int input_side, int stride2_layers) {
  int s = input_side;
  for (int i = 0; i < stride2_layers; ++i) s = (s + 2 - 4) / 2 + 1;
  s = s - 1;  // two stride-1 k4 p1 layers each remove one
  return s - 1;
}

DiscriminatorPair::DiscriminatorPair(const DiscriminatorConfig& low, const DiscriminatorConfig& high,
                                     int lowres_size, int region_size, Rng& rng)
    : d1_(low, "d1", rng), d2_(high, "d2", rng), lowres_size_(lowres_size), region_size_(region_size) {}

Tensor DiscriminatorPair::d_forward(const Tensor& image, Resolution which) const {
  const int expected = which == Resolution::low ? lowres_size_ : region_size_;
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != expected || image.dim(2) != expected) {
    throw InvalidInput(std::string(which == Resolution::low ? "D1" : "D2") + " expects 3 x " +
                       std::to_string(expected) + " x " + std::to_string(expected) + ", got " +
                       shape_string(image.shape()));
  }
  return which == Resolution::low ? d1_.forward(image) : d2_.forward(image);
}

std::vector<Tensor> DiscriminatorPair::parameters() const {
  std::vector<Tensor> out = d1_.params().tensors();
  for (const Tensor& t : d2_.params().tensors()) out.push_back(t);
  return out;
}

}  // namespace avgan
