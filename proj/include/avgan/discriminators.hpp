#pragma once

#include <string>
#include <vector>

#include "avgan/nn.hpp"
#include "avgan/tensor.hpp"

namespace avgan {

struct DiscriminatorConfig {
  int base_channels = 8;
  int stride2_layers = 3;  // 3 gives the 70x70 receptive field
};

/// PatchGAN: 4x4 convolutions, `stride2_layers` halvings, then one stride-1
/// feature layer and a stride-1 logit layer. Output is 1 x h x w raw logits.
class PatchDiscriminator {
 public:
  PatchDiscriminator(const DiscriminatorConfig& config, const std::string& name, Rng& rng);

  Tensor forward(const Tensor& x) const;
  const ParamStore& params() const { return store_; }
  /// Logit map side for a square input side.
  static int output_side(int input_side, int stride2_layers);

 private:
  DiscriminatorConfig config_;
  ParamStore store_;
  std::vector<Conv2d> layers_;
};

enum class Resolution { low, high };

/// D1 judges low-resolution full translations, D2 high-resolution regions.
class DiscriminatorPair {
 public:
  DiscriminatorPair(const DiscriminatorConfig& low, const DiscriminatorConfig& high, int lowres_size,
                    int region_size, Rng& rng);

  Tensor d_forward(const Tensor& image, Resolution which) const;

  const PatchDiscriminator& d1() const { return d1_; }
  const PatchDiscriminator& d2() const { return d2_; }
  std::vector<Tensor> parameters() const;

 private:
  PatchDiscriminator d1_;
  PatchDiscriminator d2_;
  int lowres_size_;
  int region_size_;
};

}  // namespace avgan
