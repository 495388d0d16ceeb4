#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "avgan/color_space.hpp"
#include "avgan/error.hpp"
#include "avgan/ops.hpp"

using namespace avgan;
using namespace avgan::color;

namespace {

Tensor pixel(double r, double g, double b) { return Tensor({3, 1, 1}, {r, g, b}); }

// Forward stain model evaluated by hand: rgb_j = 10^-(sum_i hed_i M_ij).
std::array<double, 3> forward_rgb(const std::array<double, 3>& hed, const StainMatrix& m) {
  std::array<double, 3> rgb{};
  for (int j = 0; j < 3; ++j) {
    double od = 0.0;
    for (int i = 0; i < 3; ++i) od += hed[i] * m[i][j];
    rgb[j] = std::min(1.0, std::pow(10.0, -od));
  }
  return rgb;
}

}  // namespace

TEST_CASE("white is zero optical density") {
  const HEDImage hed = rgb_to_hed(pixel(1, 1, 1));
  CHECK(std::abs(hed.h.item()) <= 1e-6);
  CHECK(std::abs(hed.e.item()) <= 1e-6);
  CHECK(std::abs(hed.d.item()) <= 1e-6);
  const Tensor rgb = hed_to_rgb(Tensor({3, 1, 1}, 0.0));
  for (double v : rgb.data()) CHECK(v == 1.0);
}

TEST_CASE("hematoxylin basis pixel") {
  const StainMatrix m = ruifrok_johnston();
  const auto rgb = forward_rgb({1, 0, 0}, m);
  const HEDImage hed = rgb_to_hed(pixel(rgb[0], rgb[1], rgb[2]));
  CHECK(hed.h.item() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(hed.e.item()) < 1e-9);
  CHECK(std::abs(hed.d.item()) < 1e-9);

  const Tensor back = hed_to_rgb(Tensor({3, 1, 1}, {1.0, 0.0, 0.0}));
  for (int c = 0; c < 3; ++c) CHECK(back.data()[c] == doctest::Approx(std::pow(10.0, -m[0][c])).epsilon(1e-12));
}

TEST_CASE("round trip within two levels on in-gamut pixels") {
  // In-gamut pixels are drawn in stain space so every channel lies in (0, 1].
  Rng rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.5);
  const StainMatrix m = ruifrok_johnston();
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto rgb = forward_rgb({u(rng), u(rng), u(rng)}, m);
    const Tensor p = pixel(rgb[0], rgb[1], rgb[2]);
    const Tensor q = hed_to_rgb(rgb_to_hed(p).stacked());
    for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(q.data()[c] - p.data()[c]));
  }
  CHECK(worst <= 2.0 / 255.0);
}

TEST_CASE("h channel of a white patch with one hematoxylin pixel") {
  const auto rgb = forward_rgb({1, 0, 0}, ruifrok_johnston());
  Tensor img({3, 4, 4}, 1.0);
  for (int c = 0; c < 3; ++c) img.mutable_data()[static_cast<std::size_t>(c) * 16 + 5] = rgb[c];
  const Tensor h = h_channel(img);
  REQUIRE(h.shape() == Shape{1, 4, 4});
  for (int i = 0; i < 16; ++i) CHECK(h.data()[i] == doctest::Approx(i == 5 ? 1.0 : 0.0).epsilon(1e-9));
}

TEST_CASE("h channel is per-pixel and nonnegative") {
  Rng rng(12);
  const Tensor img = testing::random_tensor(rng, {3, 5, 7}, 0.0, 1.0);
  const Tensor h = h_channel(img);
  for (double v : h.data()) CHECK(v >= 0.0);

  // Transposing the pixel grid transposes the map.
  Tensor t({3, 7, 5});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 7; ++x) t.mutable_data()[(static_cast<std::size_t>(c) * 7 + x) * 5 + y] = img.at(c, y, x);
  const Tensor ht = h_channel(t);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) CHECK(ht.at(0, x, y) == h.at(0, y, x));
}

TEST_CASE("h channel gradient matches finite differences on a 4x4 image") {
  Rng rng(13);
  const Tensor img = testing::random_param(rng, {3, 4, 4}, 0.2, 0.9);
  const auto g = testing::check_gradients([&] { return mean(h_channel(img)); }, {img}, 48);
  CHECK(g.max_rel_error < 1e-3);
  CHECK(g.max_abs_grad > 0.0);
}

TEST_CASE("stain matrix parsing") {
  const StainMatrix m = parse_stain_matrix(format_stain_matrix(ruifrok_johnston()));
  CHECK(m == ruifrok_johnston());
  CHECK(parse_stain_matrix("1 0 0, 0 1 0, 0 0 1")[1][1] == 1.0);
  CHECK_THROWS_AS(parse_stain_matrix("1 2 3"), InvalidInput);
  CHECK_THROWS_AS(parse_stain_matrix("1 1 1 1 1 1 1 1 1"), InvalidInput);
  CHECK_THROWS_AS(rgb_to_hed(Tensor({1, 2, 2}, 0.5)), InvalidInput);
}
