#pragma once

// The five generator objective terms and their weighted total.
//
//   adversarial  least-squares GAN on D1 (full translation) and D2 (regions)
//   identity     mean |G(y) - y| on target-domain inputs
//   PatchNCE     patchwise InfoNCE between source and translated encoder features
//   H channel    mean |S(x) - S(G(x))| with S the hematoxylin map
//   varifocal    sum over regions of mean |crop(G1(I)) - R(G2(a_i))|
//
// All L1 reductions are means over elements.

#include <vector>

#include "avgan/color_space.hpp"
#include "avgan/nn.hpp"
#include "avgan/region_selection.hpp"
#include "avgan/tensor.hpp"

namespace avgan::losses {

struct LossWeights {
  double adv = 1.0;
  double idt = 0.03;
  double nce = 1.0;
  double h = 2.5;
  double v = 1.0;
};

enum class AdversarialRole { generator, discriminator };

/// Generator: mean((fake - 1)^2); `real` is ignored and may be undefined.
/// Discriminator: mean((real - 1)^2) + mean(fake^2).
Tensor adversarial_loss(const Tensor& fake_logits, const Tensor& real_logits, AdversarialRole role);

Tensor l1_mean(const Tensor& a, const Tensor& b);

Tensor identity_loss(const Tensor& generator_output_on_target, const Tensor& target);

/// -log( e^{q.p/t} / (e^{q.p/t} + sum_j e^{q.n_j/t}) ); query/positive are [D],
/// negatives are D x M.
Tensor info_nce(const Tensor& query, const Tensor& positive, const Tensor& negatives, double temperature);

struct PatchNceConfig {
  int samples = 256;
  double temperature = 0.07;
  int projection_dim = 64;
};

/// Per-layer two-layer MLP heads that project sampled feature columns and
/// L2-normalise them.
class PatchProjector {
 public:
  PatchProjector(const std::vector<int>& feature_channels, int projection_dim, Rng& rng);

  /// feature: C x H x W; returns projection_dim x locations.size(), unit columns.
  Tensor project(int layer, const Tensor& feature, const std::vector<int>& locations) const;
  int layers() const { return static_cast<int>(heads_.size()); }
  const ParamStore& params() const { return store_; }

 private:
  struct Head {
    Linear fc1;
    Linear fc2;
  };
  ParamStore store_;
  std::vector<Head> heads_;
};

/// Mean over layers of the patchwise InfoNCE loss. Queries come from the
/// translated features, positives from the source features at the same
/// location, negatives from the other sampled source locations.
Tensor patch_nce_loss(const std::vector<Tensor>& source_features, const std::vector<Tensor>& translated_features,
                      const PatchProjector& projector, const PatchNceConfig& config, Rng& rng);

Tensor h_channel_loss(const Tensor& source, const Tensor& translated,
                      const color::StainMatrix& stains = color::ruifrok_johnston());

/// `regions` carries full-resolution coordinates and the region size. When it
/// also carries gate values, each term is scaled by a factor whose value is
/// one and whose gradient is that of the gate, so the attention encoders are
/// trained through this loss without changing its value.
Tensor varifocal_loss(const Tensor& g1_output, const regions::RegionSet& regions, regions::ImageDims full_size,
                      const std::vector<Tensor>& g2_outputs);

struct LossTerms {
  Tensor adv;
  Tensor idt;
  Tensor nce_x;
  Tensor nce_y;
  Tensor h;
  Tensor v;
};

Tensor total_loss(const LossTerms& terms, const LossWeights& weights);

struct LossValues {
  double adv = 0.0;
  double idt = 0.0;
  double nce_x = 0.0;
  double nce_y = 0.0;
  double h = 0.0;
  double v = 0.0;
};

double total_loss(const LossValues& values, const LossWeights& weights);

}  // namespace avgan::losses
