#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "avgan/data.hpp"
#include "avgan/error.hpp"
#include "avgan/metrics.hpp"

#include "json.hpp"

using namespace avgan;
using namespace avgan::metrics;

namespace {

FeatureSet gaussian_features(Rng& rng, int n, int d, double mean = 0.0, double sd = 1.0) {
  std::normal_distribution<double> g(mean, sd);
  FeatureSet x(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(d)));
  for (auto& row : x)
    for (double& v : row) v = g(rng);
  return x;
}

Tensor transpose_map(const Tensor& m) {
  const int h = m.dim(1), w = m.dim(2);
  Tensor t({1, w, h});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) t.mutable_data()[static_cast<std::size_t>(x) * h + y] = m.at(0, y, x);
  return t;
}

}  // namespace

TEST_CASE("fid of a set with itself vanishes") {
  Rng rng(1);
  for (auto [n, d] : {std::pair{200, 8}, std::pair{40, 16}, std::pair{10, 64}}) {
    const FeatureSet x = gaussian_features(rng, n, d);
    FidInfo info;
    CHECK(fid(x, x, &info) <= 1e-3);
    CHECK(info.regularized == (n <= d));
  }
}

TEST_CASE("one-dimensional fid from exact moments") {
  const Moments a{{0.0}, {{1.0}}};
  const Moments b{{3.0}, {{1.0}}};
  CHECK(std::abs(fid_from_moments(a, b) - 9.0) <= 1e-6);
  const Moments c{{1.0}, {{4.0}}};
  // (1 - 0)^2 + 1 + 4 - 2 * 2
  CHECK(fid_from_moments(a, c) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("fid matches the closed form for diagonal covariances and is symmetric") {
  Rng rng(2);
  const FeatureSet a = gaussian_features(rng, 300, 5, 0.0, 1.0);
  const FeatureSet b = gaussian_features(rng, 250, 5, 0.5, 2.0);
  CHECK(fid(a, b) == doctest::Approx(fid(b, a)).epsilon(1e-9));

  Moments ma{{0, 1, 2}, {{1, 0, 0}, {0, 4, 0}, {0, 0, 9}}};
  Moments mb{{1, 1, 0}, {{4, 0, 0}, {0, 1, 0}, {0, 0, 9}}};
  // sum (mu diff)^2 + sum (sqrt(a) - sqrt(b))^2
  CHECK(fid_from_moments(ma, mb) == doctest::Approx(5.0 + 1.0 + 1.0 + 0.0).epsilon(1e-10));
  CHECK_THROWS_AS(fid(a, gaussian_features(rng, 10, 4)), InvalidInput);
  CHECK_THROWS_AS(fid(FeatureSet{{1.0, 2.0}}, a), InvalidInput);
}

TEST_CASE("moments are the sample mean and unbiased covariance") {
  const Moments m = moments({{1, 2}, {3, 6}, {5, 4}});
  CHECK(m.mean[0] == doctest::Approx(3.0));
  CHECK(m.mean[1] == doctest::Approx(4.0));
  CHECK(m.cov[0][0] == doctest::Approx(4.0));
  CHECK(m.cov[1][1] == doctest::Approx(4.0));
  CHECK(m.cov[0][1] == doctest::Approx(2.0));
  CHECK(m.cov[1][0] == m.cov[0][1]);
}

TEST_CASE("kid kernel and estimator") {
  const std::vector<double> x{0.6, 0.8, 0.0, 0.0};
  CHECK(polynomial_kernel(x, x) == doctest::Approx(std::pow(1.0 / 4.0 + 1.0, 3)).epsilon(1e-15));
  const std::vector<double> y{1.0, -2.0, 0.5, 3.0};
  CHECK(polynomial_kernel(x, y) == doctest::Approx(std::pow((0.6 - 1.6) / 4.0 + 1.0, 3)).epsilon(1e-15));
  CHECK(polynomial_kernel(x, y) == polynomial_kernel(y, x));

  Rng rng(3);
  const FeatureSet a = gaussian_features(rng, 30, 6);
  const FeatureSet b = gaussian_features(rng, 30, 6, 0.3);
  // Equal sizes: both sets are used whole, so the estimate is symmetric.
  CHECK(kid(a, b) == doctest::Approx(kid(b, a)).epsilon(1e-9));
  CHECK(mmd2_unbiased(a, b) == doctest::Approx(mmd2_unbiased(b, a)).epsilon(1e-12));
  // Identical sets sit at the boundary below zero: the cross term includes the diagonal.
  CHECK(kid(a, a) <= 0.0);

  // Brute-force estimator on a tiny instance.
  const FeatureSet p{{1.0}, {2.0}, {0.0}};
  const FeatureSet q{{-1.0}, {0.5}};
  auto k = [](double u, double v) { return std::pow(u * v + 1.0, 3); };
  const double kxx = 2 * (k(1, 2) + k(1, 0) + k(2, 0)) / 6.0;
  const double kyy = 2 * k(-1, 0.5) / 2.0;
  double kxy = 0.0;
  for (double u : {1.0, 2.0, 0.0})
    for (double v : {-1.0, 0.5}) kxy += k(u, v);
  CHECK(mmd2_unbiased(p, q) == doctest::Approx(kxx + kyy - 2 * kxy / 6.0).epsilon(1e-12));
}

TEST_CASE("kid on one distribution averages to zero") {
  Rng rng(4);
  double total = 0.0;
  const int splits = 100;
  for (int s = 0; s < splits; ++s) {
    const FeatureSet a = gaussian_features(rng, 128, 64);
    const FeatureSet b = gaussian_features(rng, 128, 64);
    total += 100.0 * kid(a, b);
  }
  CHECK(std::abs(total / splits) <= 0.5);
  // Subsampling draws subsets of the requested size.
  const FeatureSet big = gaussian_features(rng, 60, 4);
  const KidOptions few{5, 20, 7};
  CHECK(kid(big, big, few) == kid(big, big, few));
  CHECK_THROWS_AS(kid(big, big, KidOptions{0, 10, 0}), InvalidInput);
}

TEST_CASE("ssim and css") {
  const data::Image8 img = data::render_synthetic(data::builtin_style("he"), 0, 64, 3);
  const Tensor s = data::to_tensor(img);
  CHECK(css({s}, {s}) == 1.0);

  Tensor inv = s.clone();
  for (double& v : inv.mutable_data()) v = 1.0 - v;
  CHECK(css({s}, {inv}) < 0.5);

  const Tensor hs = color::h_channel(s);
  const Tensor hi = color::h_channel(inv);
  CHECK(ssim(hs, hs) == 1.0);
  CHECK(ssim(transpose_map(hs), transpose_map(hi)) == doctest::Approx(ssim(hs, hi)).epsilon(1e-12));

  Rng rng(5);
  const Tensor a = testing::random_tensor(rng, {1, 20, 30}, 0, 1);
  const Tensor b = testing::random_tensor(rng, {1, 20, 30}, 0, 1);
  const double v = ssim(a, b);
  CHECK(v >= -1.0);
  CHECK(v <= 1.0);
  CHECK(v == doctest::Approx(ssim(b, a)).epsilon(1e-12));
  CHECK_THROWS_AS(ssim(a, Tensor({1, 20, 29})), InvalidInput);
  CHECK_THROWS_AS(ssim(Tensor({1, 8, 8}), Tensor({1, 8, 8})), InvalidInput);
  CHECK_THROWS_AS(css({s, s}, {s}), InvalidInput);
}

TEST_CASE("toy extractor is deterministic and registered") {
  const auto fx = make_extractor("toy");
  CHECK(fx->name() == "toy-conv64");
  CHECK(fx->dim() == 64);
  const Tensor img = data::to_tensor(data::render_synthetic(data::builtin_style("mt"), 1, 64, 3));
  const auto f1 = fx->extract(img);
  CHECK(f1.size() == 64u);
  CHECK(f1 == make_extractor("toy")->extract(img));
  for (double v : f1) CHECK(v >= 0.0);
  CHECK_THROWS_AS(make_extractor("inception"), InvalidInput);

  register_extractor("toy-seed9", [] { return std::make_unique<ToyConvExtractor>(9); });
  const auto names = extractor_names();
  CHECK(std::find(names.begin(), names.end(), "toy-seed9") != names.end());
  CHECK(make_extractor("toy-seed9")->extract(img) != f1);
}

TEST_CASE("metric report serialisation and set evaluation") {
  std::vector<Tensor> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back(data::to_tensor(data::render_synthetic(data::builtin_style("he"), i, 64, 3)));
  const auto fx = make_extractor("toy");
  MetricReport r = evaluate_sets(imgs, imgs, imgs, *fx);
  CHECK(r.fid <= 1e-3);
  CHECK(r.css == 1.0);
  CHECK(r.n_samples == 4);
  CHECK(r.extractor == "toy-conv64");
  r.config_hash = "abc";
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["config_hash"] == "abc");
  CHECK(j["n_samples"] == 4);
  CHECK(MetricReport::csv_header() == "fid,kid_x100,css,n_samples,extractor,config_hash");
  CHECK(r.csv_row().ends_with(",4,toy-conv64,abc"));
}
