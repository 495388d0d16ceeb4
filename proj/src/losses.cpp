#include "avgan/losses.hpp"

#include <algorithm>
#include <cmath>

#include "avgan/error.hpp"
#include "avgan/ops.hpp"

namespace avgan::losses {
namespace {

Tensor as_scalar(const Tensor& t) { return reshape(t, Shape{}); }

}  // namespace

Tensor adversarial_loss(const Tensor& fake_logits, const Tensor& real_logits, AdversarialRole role) {
  if (role == AdversarialRole::generator) return mean(square(add_scalar(fake_logits, -1.0)));
  if (!real_logits.defined()) throw InvalidInput("discriminator loss needs real logits");
  return add(mean(square(add_scalar(real_logits, -1.0))), mean(square(fake_logits)));
}

Tensor l1_mean(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw InvalidInput("L1: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  return mean(abs(sub(a, b)));
}

Tensor identity_loss(const Tensor& generator_output_on_target, const Tensor& target) {
  return l1_mean(generator_output_on_target, target);
}

Tensor info_nce(const Tensor& query, const Tensor& positive, const Tensor& negatives, double temperature) {
  const int d = static_cast<int>(query.numel());
  if (positive.numel() != query.numel() || negatives.rank() != 2 || negatives.dim(0) != d) {
    throw InvalidInput("info_nce: query, positive and negatives must share the feature dimension");
  }
  const Tensor q = reshape(query, Shape{1, d});
  const Tensor pos = scale(reshape(matmul(q, reshape(positive, Shape{d, 1})), Shape{}), 1.0 / temperature);
  const Tensor neg = scale(matmul(q, negatives), 1.0 / temperature);
  // Shift by the largest logit before exponentiating.
  double shift = pos.item();
  for (double v : neg.data()) shift = std::max(shift, v);
  const Tensor denom = add(exp(add_scalar(pos, -shift)), sum(exp(add_scalar(neg, -shift))));
  return sub(add_scalar(log(denom), shift), pos);
}

PatchProjector::PatchProjector(const std::vector<int>& feature_channels, int projection_dim, Rng& rng) {
  if (projection_dim <= 0) throw InvalidInput("projection_dim must be positive");
  for (std::size_t i = 0; i < feature_channels.size(); ++i) {
    const std::string name = "nce_mlp" + std::to_string(i);
    heads_.push_back({make_linear(store_, name + ".fc1", feature_channels[i], projection_dim, rng),
                      make_linear(store_, name + ".fc2", projection_dim, projection_dim, rng)});
  }
}

Tensor PatchProjector::project(int layer, const Tensor& feature, const std::vector<int>& locations) const {
  if (layer < 0 || layer >= layers()) throw InvalidInput("projector layer out of range");
  const Tensor flat = reshape(feature, Shape{feature.dim(0), feature.dim(1) * feature.dim(2)});
  const Tensor sampled = select_columns(flat, locations);
  const Head& h = heads_[static_cast<std::size_t>(layer)];
  return normalize_columns(h.fc2(relu(h.fc1(sampled))));
}

Tensor patch_nce_loss(const std::vector<Tensor>& source_features, const std::vector<Tensor>& translated_features,
                      const PatchProjector& projector, const PatchNceConfig& config, Rng& rng) {
  if (source_features.size() != translated_features.size() ||
      static_cast<int>(source_features.size()) != projector.layers() || source_features.empty()) {
    throw InvalidInput("patch_nce_loss: feature layer count mismatch");
  }
  std::vector<Tensor> per_layer;
  for (std::size_t l = 0; l < source_features.size(); ++l) {
    const Tensor& src = source_features[l];
    const Tensor& tr = translated_features[l];
    if (src.shape() != tr.shape()) throw InvalidInput("patch_nce_loss: feature shapes differ at layer " + std::to_string(l));
    const int locations = src.dim(1) * src.dim(2);
    if (locations < config.samples) {
      throw InvalidInput("patch_nce_loss: layer " + std::to_string(l) + " has " + std::to_string(locations) +
                         " locations, fewer than the " + std::to_string(config.samples) + " requested");
    }
    const std::vector<int> ids = sample_without_replacement(rng, locations, config.samples);
    const Tensor keys = projector.project(static_cast<int>(l), src, ids);
    const Tensor queries = projector.project(static_cast<int>(l), tr, ids);
    const Tensor logits = scale(matmul(transpose(queries), keys), 1.0 / config.temperature);
    const Tensor logp = log_softmax_rows(logits);
    std::vector<int> diag(static_cast<std::size_t>(config.samples));
    for (int i = 0; i < config.samples; ++i) diag[static_cast<std::size_t>(i)] = i * config.samples + i;
    per_layer.push_back(scale(mean(take(logp, diag)), -1.0));
  }
  return mean(stack_scalars(per_layer));
}

Tensor h_channel_loss(const Tensor& source, const Tensor& translated, const color::StainMatrix& stains) {
  if (source.shape() != translated.shape()) {
    throw InvalidInput("h_channel_loss: shape mismatch " + shape_string(source.shape()) + " vs " +
                       shape_string(translated.shape()));
  }
  return l1_mean(color::h_channel(source, stains), color::h_channel(translated, stains));
}

Tensor varifocal_loss(const Tensor& g1_output, const regions::RegionSet& regions, regions::ImageDims full_size,
                      const std::vector<Tensor>& g2_outputs) {
  if (g2_outputs.size() != regions.coords.size()) throw InvalidInput("varifocal_loss: one G2 output per region");
  if (regions.weights.defined() && regions.weights.numel() != regions.coords.size()) {
    throw InvalidInput("varifocal_loss: one weight per region");
  }
  const double sy = static_cast<double>(g1_output.dim(1)) / full_size.height;
  const double sx = static_cast<double>(g1_output.dim(2)) / full_size.width;
  const int low_h = static_cast<int>(std::lround(regions.size * sy));
  const int low_w = static_cast<int>(std::lround(regions.size * sx));
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < regions.coords.size(); ++i) {
    const auto& c = regions.coords[i];
    const int top = static_cast<int>(std::floor(c.row * sy));
    const int left = static_cast<int>(std::floor(c.col * sx));
    if (top < 0 || left < 0 || top + low_h > g1_output.dim(1) || left + low_w > g1_output.dim(2)) {
      throw InvalidInput("varifocal_loss: region " + std::to_string(i) + " out of bounds after scaling");
    }
    const Tensor b = crop(g1_output, top, left, low_h, low_w);
    const Tensor& g2 = g2_outputs[i];
    // Compare at the smaller of the two resolutions.
    Tensor term;
    if (g2.dim(1) * g2.dim(2) >= low_h * low_w) {
      term = l1_mean(b, resize_bilinear(g2, low_h, low_w));
    } else {
      term = l1_mean(resize_bilinear(b, g2.dim(1), g2.dim(2)), g2);
    }
    if (regions.weights.defined()) {
      // 1 + m - stop_grad(m): the value is exactly one, the gradient is dm.
      const Tensor m = as_scalar(take(regions.weights, {static_cast<int>(i)}));
      term = mul(term, add_scalar(sub(m, m.detach()), 1.0));
    }
    total = add(total, term);
  }
  return total;
}

Tensor total_loss(const LossTerms& t, const LossWeights& w) {
  Tensor out = scale(t.adv, w.adv);
  out = add(out, scale(t.idt, w.idt));
  out = add(out, scale(add(t.nce_x, t.nce_y), w.nce));
  out = add(out, scale(t.h, w.h));
  out = add(out, scale(t.v, w.v));
  return out;
}

double total_loss(const LossValues& t, const LossWeights& w) {
  return w.adv * t.adv + w.idt * t.idt + w.nce * (t.nce_x + t.nce_y) + w.h * t.h + w.v * t.v;
}

}  // namespace avgan::losses
