#pragma once

// Varifocal generator pair.
//
// G1 translates the whole patch at the low working resolution; G2 translates
// each selected key region at full resolution. Both use the same ResNet-style
// skeleton: reflect-padded 7x7 stem, stride-2 downsampling, a lightweight
// spatial-attention block, residual blocks, nearest-upsampling convolutions
// and a sigmoid output in [0, 1]. Parameters are disjoint unless the
// shared-weights ablation is enabled, in which case both evaluate one store.

#include <memory>
#include <string>
#include <vector>

#include "avgan/nn.hpp"
#include "avgan/tensor.hpp"

namespace avgan {

struct GeneratorConfig {
  int base_channels = 8;
  int n_residual_blocks = 4;
  int downsample_steps = 2;
  bool shared_weights = false;
};

class ResnetGenerator {
 public:
  ResnetGenerator(const GeneratorConfig& config, const std::string& name, Rng& rng);

  struct Output {
    Tensor image;
    std::vector<Tensor> features;  // stem, each downsampling stage, first residual block
  };

  Tensor forward(const Tensor& x) const;
  Output forward_with_features(const Tensor& x) const;
  /// Encoder half only, stopping after the last feature layer.
  std::vector<Tensor> encode(const Tensor& x) const;

  /// Channel count of each entry of Output::features.
  std::vector<int> feature_channels() const;
  const ParamStore& params() const { return store_; }
  const GeneratorConfig& config() const { return config_; }

 private:
  struct ResBlock {
    Conv2d conv1;
    Conv2d conv2;
  };
  Tensor run(const Tensor& x, std::vector<Tensor>* features, bool encoder_only) const;
  Tensor spatial_attention(const Tensor& x) const;

  GeneratorConfig config_;
  ParamStore store_;
  Conv2d stem_;
  std::vector<Conv2d> down_;
  Conv2d attention_;
  std::vector<ResBlock> blocks_;
  std::vector<Conv2d> up_;
  Conv2d head_;
};

class VarifocalGenerators {
 public:
  VarifocalGenerators(const GeneratorConfig& config, int lowres_size, int region_size, Rng& rng);

  /// Low-resolution translation of the resized patch (3 x lowres x lowres).
  Tensor g1_forward(const Tensor& resized_patch) const;
  ResnetGenerator::Output g1_forward_with_features(const Tensor& resized_patch) const;
  /// Full-resolution translation of one key region (3 x region x region).
  Tensor g2_forward(const Tensor& region) const;

  const ResnetGenerator& g1() const { return *g1_; }
  const ResnetGenerator& g2() const { return *g2_; }
  bool shared() const { return g1_ == g2_; }
  int lowres_size() const { return lowres_size_; }
  int region_size() const { return region_size_; }
  /// Every distinct parameter once.
  std::vector<Tensor> parameters() const;

 private:
  void check(const Tensor& x, int expected, const char* which) const;

  std::shared_ptr<ResnetGenerator> g1_;
  std::shared_ptr<ResnetGenerator> g2_;
  int lowres_size_;
  int region_size_;
};

}  // namespace avgan
