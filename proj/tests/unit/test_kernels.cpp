#include <random>

#include "doctest.h"
#include "helpers.hpp"

#include "avgan/kernels.hpp"

using namespace avgan;
using kernels::Trans;

namespace {

// Plain triple loop, independent of both kernel variants.
std::vector<double> naive_gemm(Trans ta, Trans tb, int m, int n, int k, const std::vector<double>& a,
                               const std::vector<double>& b) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) {
        const double av = ta == Trans::no ? a[static_cast<std::size_t>(i) * k + p] : a[static_cast<std::size_t>(p) * m + i];
        const double bv = tb == Trans::no ? b[static_cast<std::size_t>(p) * n + j] : b[static_cast<std::size_t>(j) * k + p];
        s += av * bv;
      }
      c[static_cast<std::size_t>(i) * n + j] = s;
    }
  }
  return c;
}

}  // namespace

TEST_CASE("scalar gemm matches a naive product for every transpose combination") {
  Rng rng(1);
  for (int trial = 0; trial < 40; ++trial) {
    const int m = 1 + static_cast<int>(rng() % 19);
    const int n = 1 + static_cast<int>(rng() % 23);
    const int k = 1 + static_cast<int>(rng() % 17);
    for (Trans ta : {Trans::no, Trans::yes}) {
      for (Trans tb : {Trans::no, Trans::yes}) {
        const auto a = testing::uniform(rng, static_cast<std::size_t>(m) * k);
        const auto b = testing::uniform(rng, static_cast<std::size_t>(k) * n);
        std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
        kernels::scalar::gemm(ta, tb, m, n, k, a.data(), ta == Trans::no ? k : m, b.data(), tb == Trans::no ? n : k,
                              c.data(), n, false);
        const auto ref = naive_gemm(ta, tb, m, n, k, a, b);
        for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("gemm accumulate adds into C") {
  const std::vector<double> a{1, 2, 3, 4};
  const std::vector<double> b{1, 0, 0, 1};
  std::vector<double> c{10, 10, 10, 10};
  kernels::gemm(Trans::no, Trans::no, 2, 2, 2, a.data(), 2, b.data(), 2, c.data(), 2, true);
  CHECK(c == std::vector<double>{11, 12, 13, 14});
  kernels::gemm(Trans::no, Trans::no, 2, 2, 2, a.data(), 2, b.data(), 2, c.data(), 2, false);
  CHECK(c == std::vector<double>{1, 2, 3, 4});
}

#if defined(AVGAN_HAVE_AVX2)
TEST_CASE("avx2 kernels agree with the scalar reference") {
  if (!kernels::isa_supported(kernels::Isa::avx2)) {
    MESSAGE("host lacks AVX2; skipping equivalence checks");
    return;
  }
  Rng rng(2);
  SUBCASE("gemm, ragged shapes and strides") {
    for (int trial = 0; trial < 60; ++trial) {
      const int m = 1 + static_cast<int>(rng() % 37);
      const int n = 1 + static_cast<int>(rng() % 41);
      const int k = 1 + static_cast<int>(rng() % 29);
      const int pad = static_cast<int>(rng() % 3);
      for (Trans ta : {Trans::no, Trans::yes}) {
        for (Trans tb : {Trans::no, Trans::yes}) {
          const int lda = (ta == Trans::no ? k : m) + pad;
          const int ldb = (tb == Trans::no ? n : k) + pad;
          const int ldc = n + pad;
          const auto a = testing::uniform(rng, static_cast<std::size_t>(ta == Trans::no ? m : k) * lda);
          const auto b = testing::uniform(rng, static_cast<std::size_t>(tb == Trans::no ? k : n) * ldb);
          const auto c0 = testing::uniform(rng, static_cast<std::size_t>(m) * ldc);
          for (bool acc : {false, true}) {
            auto cs = c0;
            auto cv = c0;
            kernels::scalar::gemm(ta, tb, m, n, k, a.data(), lda, b.data(), ldb, cs.data(), ldc, acc);
            kernels::avx2::gemm(ta, tb, m, n, k, a.data(), lda, b.data(), ldb, cv.data(), ldc, acc);
            for (int i = 0; i < m; ++i) {
              for (int j = 0; j < n; ++j) {
                const std::size_t idx = static_cast<std::size_t>(i) * ldc + j;
                REQUIRE(std::abs(cs[idx] - cv[idx]) <= 1e-12 * (1.0 + std::abs(cs[idx])) * k);
              }
              // Padding columns are never written.
              for (int j = n; j < ldc; ++j) {
                const std::size_t idx = static_cast<std::size_t>(i) * ldc + j;
                REQUIRE(cv[idx] == c0[idx]);
              }
            }
          }
        }
      }
    }
  }
  SUBCASE("dot") {
    for (std::size_t len : {0u, 1u, 3u, 4u, 7u, 8u, 15u, 16u, 33u, 1000u}) {
      const auto x = testing::uniform(rng, len);
      const auto y = testing::uniform(rng, len);
      const double s = kernels::scalar::dot(x, y);
      const double v = kernels::avx2::dot(x, y);
      CHECK(std::abs(s - v) <= 1e-12 * (1.0 + static_cast<double>(len)));
    }
  }
  SUBCASE("axpy is bitwise identical") {
    for (std::size_t len : {0u, 1u, 5u, 8u, 13u, 64u, 1001u}) {
      const auto x = testing::uniform(rng, len);
      auto ys = testing::uniform(rng, len);
      auto yv = ys;
      kernels::scalar::axpy(0.37, x, ys);
      kernels::avx2::axpy(0.37, x, yv);
      CHECK(ys == yv);
    }
  }
  SUBCASE("adam update is bitwise identical") {
    const kernels::AdamStep step{2e-4, 0.5, 0.999, 1e-8, 1.0 - 0.5 * 0.5, 1.0 - 0.999 * 0.999};
    for (std::size_t len : {1u, 3u, 4u, 9u, 100u, 1027u}) {
      auto p1 = testing::uniform(rng, len);
      const auto g = testing::uniform(rng, len);
      auto m1 = testing::uniform(rng, len, -0.1, 0.1);
      auto v1 = testing::uniform(rng, len, 0.0, 0.1);
      auto p2 = p1, m2 = m1, v2 = v1;
      kernels::scalar::adam_update(p1, g, m1, v1, step);
      kernels::avx2::adam_update(p2, g, m2, v2, step);
      CHECK(p1 == p2);
      CHECK(m1 == m2);
      CHECK(v1 == v2);
    }
  }
}
#endif

TEST_CASE("isa selection can be switched and reports names") {
  const kernels::Isa before = kernels::active_isa();
  kernels::set_active_isa(kernels::Isa::scalar);
  CHECK(kernels::active_isa() == kernels::Isa::scalar);
  CHECK(kernels::isa_name(kernels::Isa::scalar) == "scalar");
  CHECK(kernels::isa_name(kernels::Isa::avx2) == "avx2");
  kernels::set_active_isa(before);
}

TEST_CASE("scalar adam matches the textbook update") {
  std::vector<double> p{1.0}, g{0.5}, m{0.0}, v{0.0};
  const kernels::AdamStep s{0.1, 0.9, 0.999, 1e-8, 0.1, 0.001};
  kernels::scalar::adam_update(p, g, m, v, s);
  const double mh = (0.1 * 0.5) / 0.1;
  const double vh = (0.001 * 0.25) / 0.001;
  CHECK(m[0] == doctest::Approx(0.05));
  CHECK(v[0] == doctest::Approx(0.00025));
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * mh / (std::sqrt(vh) + 1e-8)));
}
