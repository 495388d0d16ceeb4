#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"

#include "avgan/color_space.hpp"
#include "avgan/error.hpp"
#include "avgan/generators.hpp"
#include "avgan/losses.hpp"
#include "avgan/ops.hpp"

using namespace avgan;
using namespace avgan::losses;
using regions::ImageDims;
using regions::RegionSet;

namespace {

Tensor constant(Shape s, double v) { return Tensor(std::move(s), v); }

double grad_norm(const std::vector<Tensor>& ts) {
  double s = 0.0;
  for (const Tensor& t : ts)
    for (double g : t.grad()) s += g * g;
  return std::sqrt(s);
}

// Stain-space image with H in [0.1, 0.8] and small E and D, rendered to RGB.
Tensor hed_fixture(Rng& rng, int h, int w) {
  Tensor hed({3, h, w});
  std::uniform_real_distribution<double> uh(0.1, 0.8), ue(0.05, 0.4), ud(0.0, 0.1);
  auto d = hed.mutable_data();
  const std::size_t n = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = uh(rng);
    d[n + i] = ue(rng);
    d[2 * n + i] = ud(rng);
  }
  return hed;
}

Tensor shift_channel(const Tensor& hed, int channel, double delta) {
  Tensor out = hed.clone();
  const std::size_t n = static_cast<std::size_t>(hed.dim(1)) * hed.dim(2);
  auto d = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i) d[static_cast<std::size_t>(channel) * n + i] += delta;
  return out;
}

RegionSet region_set(std::vector<regions::RegionCoord> coords, int size) {
  RegionSet s;
  s.coords = std::move(coords);
  s.size = size;
  return s;
}

}  // namespace

TEST_CASE("adversarial loss examples") {
  const Shape s{1, 6, 6};
  CHECK(adversarial_loss(constant(s, 1.0), Tensor{}, AdversarialRole::generator).item() == 0.0);
  CHECK(adversarial_loss(constant(s, 0.0), constant(s, 1.0), AdversarialRole::discriminator).item() == 0.0);
  CHECK(adversarial_loss(constant(s, 0.5), constant(s, 0.5), AdversarialRole::discriminator).item() ==
        doctest::Approx(0.5).epsilon(1e-15));
  CHECK(adversarial_loss(constant(s, 0.0), Tensor{}, AdversarialRole::generator).item() == 1.0);
  CHECK_THROWS_AS(adversarial_loss(constant(s, 0.0), Tensor{}, AdversarialRole::discriminator), InvalidInput);
}

TEST_CASE("identity loss examples") {
  Rng rng(1);
  const Tensor a = testing::random_tensor(rng, {3, 5, 5}, 0, 1);
  CHECK(identity_loss(a, a).item() == 0.0);
  CHECK(identity_loss(add_scalar(a, 0.1), a).item() == doctest::Approx(0.1).epsilon(1e-12));
  const Tensor b = testing::random_tensor(rng, {3, 5, 5}, 0, 1);
  double ref = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) ref += std::abs(a.data()[i] - b.data()[i]);
  ref /= static_cast<double>(a.numel());
  CHECK(identity_loss(a, b).item() == doctest::Approx(ref).epsilon(1e-14));
  CHECK_THROWS_AS(identity_loss(a, Tensor({3, 4, 5})), InvalidInput);
}

TEST_CASE("info_nce closed forms") {
  const Tensor v({1}, {1.0});
  CHECK(info_nce(v, v, Tensor({1, 1}, {1.0}), 0.07).item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  // Equal logits over K candidates give ln K.
  const Tensor q({2}, {0.6, 0.8});
  const Tensor negs({2, 4}, {0.6, 0.6, 0.6, 0.6, 0.8, 0.8, 0.8, 0.8});
  CHECK(info_nce(q, q, negs, 0.5).item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));

  // Large logits do not overflow.
  CHECK(std::isfinite(info_nce(q, q, negs, 1e-4).item()));

  Rng rng(2);
  const Tensor qq = testing::random_tensor(rng, {6});
  const Tensor pp = testing::random_tensor(rng, {6});
  const Tensor nn = testing::random_tensor(rng, {6, 9});
  const double base = info_nce(qq, pp, nn, 0.3).item();
  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  CHECK(info_nce(qq, pp, select_columns(nn, perm), 0.3).item() == doctest::Approx(base).epsilon(1e-13));
  // Brute-force value.
  double pos = 0.0;
  for (int i = 0; i < 6; ++i) pos += qq.data()[i] * pp.data()[i] / 0.3;
  double denom = std::exp(pos);
  for (int j = 0; j < 9; ++j) {
    double s = 0.0;
    for (int i = 0; i < 6; ++i) s += qq.data()[i] * nn.data()[i * 9 + j] / 0.3;
    denom += std::exp(s);
  }
  CHECK(base == doctest::Approx(std::log(denom) - pos).epsilon(1e-12));
  CHECK(base >= 0.0);
}

TEST_CASE("patch nce on identical features falls far below the uniform baseline") {
  Rng rng(3);
  PatchProjector proj({4, 6}, 16, rng);
  const std::vector<Tensor> feats{testing::random_tensor(rng, {4, 8, 8}), testing::random_tensor(rng, {6, 4, 4})};
  PatchNceConfig cfg;
  cfg.samples = 16;
  cfg.temperature = 0.01;
  Rng srng(4);
  const double loss = patch_nce_loss(feats, feats, proj, cfg, srng).item();
  CHECK(loss >= 0.0);
  CHECK(loss < 0.1 * std::log(16.0));

  cfg.temperature = 0.07;
  Rng a(5), b(5);
  CHECK(patch_nce_loss(feats, feats, proj, cfg, a).item() == patch_nce_loss(feats, feats, proj, cfg, b).item());

  cfg.samples = 17;
  CHECK_THROWS_AS(patch_nce_loss(feats, feats, proj, cfg, a), InvalidInput);
}

TEST_CASE("projector output columns are unit length") {
  Rng rng(6);
  PatchProjector proj({5}, 8, rng);
  const Tensor p = proj.project(0, testing::random_tensor(rng, {5, 3, 3}), {0, 4, 8});
  REQUIRE(p.shape() == Shape{8, 3});
  for (int c = 0; c < 3; ++c) {
    double s = 0.0;
    for (int r = 0; r < 8; ++r) s += p.data()[r * 3 + c] * p.data()[r * 3 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(proj.params().entries().front().first.rfind("nce_mlp0.fc1", 0) == 0);
}

TEST_CASE("h channel loss examples") {
  Rng rng(7);
  const Tensor hed = hed_fixture(rng, 8, 8);
  const Tensor src = color::hed_to_rgb(hed);
  CHECK(h_channel_loss(src, src).item() == 0.0);

  const Tensor e_shift = color::hed_to_rgb(shift_channel(hed, 1, 0.15));
  CHECK(h_channel_loss(src, e_shift).item() < 1e-9);

  const Tensor h_shift = color::hed_to_rgb(shift_channel(hed, 0, 0.2));
  CHECK(h_channel_loss(src, h_shift).item() == doctest::Approx(0.2).epsilon(1e-9));
  CHECK_THROWS_AS(h_channel_loss(src, Tensor({3, 8, 7}, 0.5)), InvalidInput);
}

TEST_CASE("varifocal loss fixpoint, constant offset and additivity") {
  Rng rng(8);
  const ImageDims full{64, 64};
  const Tensor g1 = testing::random_tensor(rng, {3, 32, 32}, 0, 1);
  // Full-resolution corners (8, 24) and (30, 2) map to (4, 12) and (15, 1).
  const RegionSet one = region_set({{8, 24}}, 16);
  const RegionSet two = region_set({{8, 24}, {30, 2}}, 16);
  const Tensor up1 = upsample_nearest(crop(g1, 4, 12, 8, 8), 2);
  const Tensor up2 = upsample_nearest(crop(g1, 15, 1, 8, 8), 2);

  CHECK(varifocal_loss(g1, one, full, {up1}).item() == 0.0);
  CHECK(varifocal_loss(g1, two, full, {up1, up2}).item() == 0.0);

  const double off = varifocal_loss(g1, one, full, {add_scalar(up1, 0.05)}).item();
  CHECK(off == doctest::Approx(0.05).epsilon(1e-12));

  const Tensor r1 = testing::random_tensor(rng, {3, 16, 16}, 0, 1);
  const Tensor r2 = testing::random_tensor(rng, {3, 16, 16}, 0, 1);
  const double v1 = varifocal_loss(g1, one, full, {r1}).item();
  const double v2 = varifocal_loss(g1, region_set({{30, 2}}, 16), full, {r2}).item();
  CHECK(varifocal_loss(g1, two, full, {r1, r2}).item() == doctest::Approx(v1 + v2).epsilon(1e-14));

  // When the low-resolution crop is the larger one it is resized instead.
  const Tensor small = testing::random_tensor(rng, {3, 4, 4}, 0, 1);
  CHECK(varifocal_loss(g1, one, full, {small}).item() == doctest::Approx(
      l1_mean(resize_bilinear(crop(g1, 4, 12, 8, 8), 4, 4), small).item()).epsilon(1e-14));

  CHECK_THROWS_AS(varifocal_loss(g1, region_set({{60, 0}}, 16), full, {r1}), InvalidInput);
  CHECK_THROWS_AS(varifocal_loss(g1, two, full, {r1}), InvalidInput);
}

TEST_CASE("gate weighting keeps the varifocal value and passes gradient to the gate") {
  Rng rng(9);
  const ImageDims full{64, 64};
  const Tensor g1 = testing::random_tensor(rng, {3, 32, 32}, 0, 1);
  const Tensor r1 = testing::random_tensor(rng, {3, 16, 16}, 0, 1);
  const Tensor r2 = testing::random_tensor(rng, {3, 16, 16}, 0, 1);
  RegionSet s = region_set({{8, 24}, {30, 2}}, 16);
  const double plain = varifocal_loss(g1, s, full, {r1, r2}).item();
  const Tensor w = Tensor::parameter({2}, {0.3, 0.9});
  s.weights = w;
  const Tensor weighted = varifocal_loss(g1, s, full, {r1, r2});
  CHECK(weighted.item() == doctest::Approx(plain).epsilon(1e-15));
  weighted.backward();
  const double t1 = varifocal_loss(g1, region_set({{8, 24}}, 16), full, {r1}).item();
  const double t2 = varifocal_loss(g1, region_set({{30, 2}}, 16), full, {r2}).item();
  CHECK(w.grad()[0] == doctest::Approx(t1).epsilon(1e-12));
  CHECK(w.grad()[1] == doctest::Approx(t2).epsilon(1e-12));
}

TEST_CASE("varifocal loss reaches both generators") {
  Rng rng(10);
  GeneratorConfig c;
  c.base_channels = 4;
  c.n_residual_blocks = 1;
  VarifocalGenerators gens(c, 32, 16, rng);
  const Tensor x = testing::random_tensor(rng, {3, 64, 64}, 0, 1);
  const Tensor low = resize_bilinear(x, 32, 32);
  const RegionSet s = region_set({{8, 24}}, 16);
  const Tensor region = crop(x, 8, 24, 16, 16);
  varifocal_loss(gens.g1_forward(low), s, {64, 64}, {gens.g2_forward(region)}).backward();
  CHECK(grad_norm(gens.g1().params().tensors()) > 0.0);
  CHECK(grad_norm(gens.g2().params().tensors()) > 0.0);
}

TEST_CASE("total loss arithmetic") {
  const LossWeights w;
  CHECK(w.adv == 1.0);
  CHECK(w.idt == 0.03);
  CHECK(w.nce == 1.0);
  CHECK(w.h == 2.5);
  CHECK(w.v == 1.0);
  CHECK(total_loss(LossValues{}, w) == 0.0);
  const LossValues ones{1, 1, 1, 1, 1, 1};
  CHECK(std::abs(total_loss(ones, w) - 6.53) <= 1e-12);
  const LossTerms t{Tensor::scalar(1), Tensor::scalar(1), Tensor::scalar(1), Tensor::scalar(1), Tensor::scalar(1),
                    Tensor::scalar(1)};
  CHECK(std::abs(total_loss(t, w).item() - 6.53) <= 1e-12);

  const LossValues v{0.7, 1.3, 2.1, 0.4, 0.25, 0.9};
  LossWeights w2 = w;
  w2.h *= 2;
  CHECK(total_loss(v, w2) - total_loss(v, w) == doctest::Approx(w.h * v.h).epsilon(1e-12));
  // Linear in each weight separately.
  for (double LossWeights::*field : {&LossWeights::adv, &LossWeights::idt, &LossWeights::nce, &LossWeights::h,
                                      &LossWeights::v}) {
    LossWeights a = w, b = w, c = w;
    a.*field = 0.0;
    b.*field = 1.0;
    c.*field = 3.0;
    const double slope = total_loss(v, b) - total_loss(v, a);
    CHECK(total_loss(v, c) == doctest::Approx(total_loss(v, a) + 3.0 * slope).epsilon(1e-12));
  }
}

TEST_CASE("losses match finite differences on small instances") {
  Rng rng(11);
  const Tensor fake = testing::random_param(rng, {1, 4, 4});
  const Tensor real = testing::random_param(rng, {1, 4, 4});
  auto g = testing::check_gradients([&] { return adversarial_loss(fake, real, AdversarialRole::discriminator); },
                                    {fake, real}, 16);
  CHECK(g.max_rel_error < 1e-3);
  g = testing::check_gradients([&] { return adversarial_loss(fake, Tensor{}, AdversarialRole::generator); }, {fake}, 16);
  CHECK(g.max_rel_error < 1e-3);

  const Tensor a = testing::random_param(rng, {3, 4, 4}, 0, 1);
  const Tensor b = testing::random_tensor(rng, {3, 4, 4}, 0, 1);
  g = testing::check_gradients([&] { return identity_loss(a, b); }, {a}, 48);
  CHECK(g.max_rel_error < 1e-3);

  const Tensor q = testing::random_param(rng, {5});
  const Tensor p = testing::random_param(rng, {5});
  const Tensor n = testing::random_param(rng, {5, 7});
  g = testing::check_gradients([&] { return info_nce(q, p, n, 0.5); }, {q, p, n});
  CHECK(g.max_rel_error < 1e-3);

  const Tensor src = testing::random_param(rng, {3, 4, 4}, 0.2, 0.9);
  const Tensor tr = testing::random_param(rng, {3, 4, 4}, 0.2, 0.9);
  g = testing::check_gradients([&] { return h_channel_loss(src, tr); }, {tr}, 48);
  CHECK(g.max_rel_error < 1e-3);
  CHECK(g.max_abs_grad > 0.0);

  const Tensor g1 = testing::random_param(rng, {3, 8, 8}, 0, 1);
  const Tensor g2 = testing::random_param(rng, {3, 8, 8}, 0, 1);
  RegionSet s = region_set({{4, 6}}, 8);
  s.weights = Tensor::parameter({1}, {0.8});
  g = testing::check_gradients([&] { return varifocal_loss(g1, s, {16, 16}, {g2}); }, {g1, g2}, 24);
  CHECK(g.max_rel_error < 1e-3);

  PatchProjector proj({3}, 4, rng);
  const Tensor fs = testing::random_param(rng, {3, 3, 3});
  const Tensor ft = testing::random_param(rng, {3, 3, 3});
  PatchNceConfig cfg;
  cfg.samples = 5;
  cfg.temperature = 0.5;
  std::vector<Tensor> inputs{fs, ft};
  for (const auto& [name, t] : proj.params().entries()) {
    // Zero biases would put a column with all units dead at the normalisation singularity.
    if (name.ends_with(".bias")) {
      Tensor b = t;
      for (double& v : b.mutable_data()) v = std::uniform_real_distribution<double>(0.2, 0.6)(rng);
    }
    inputs.push_back(t);
  }
  g = testing::check_gradients(
      [&] {
        Rng r(12);
        return patch_nce_loss({fs}, {ft}, proj, cfg, r);
      },
      inputs, 6);
  // Entries here are down to ~1e-8; compare whole gradients.
  CHECK(g.norm_rel_error < 1e-4);
  CHECK(g.max_tensor_norm_rel_error < 1e-3);
  CHECK(g.max_abs_grad > 0.0);
}
