#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "avgan/kernels.hpp"

namespace avgan::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(AVGAN_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  const char* env = std::getenv("AVGAN_SIMD");
  const std::string choice = env ? env : "auto";
  if (choice == "scalar") return Isa::scalar;
  if (choice == "avx2" && !cpu_has_avx2()) {
    throw std::runtime_error("AVGAN_SIMD=avx2 requested but AVX2/FMA is unavailable");
  }
  return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

bool isa_supported(Isa isa) { return isa == Isa::scalar || cpu_has_avx2(); }

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) throw std::invalid_argument("instruction set not supported on this host");
  active().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

void gemm(Trans trans_a, Trans trans_b, int m, int n, int k, const double* a, int lda,
          const double* b, int ldb, double* c, int ldc, bool accumulate) {
#if defined(AVGAN_HAVE_AVX2)
  if (active_isa() == Isa::avx2) {
    avx2::gemm(trans_a, trans_b, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
    return;
  }
#endif
  scalar::gemm(trans_a, trans_b, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

double dot(std::span<const double> x, std::span<const double> y) {
#if defined(AVGAN_HAVE_AVX2)
  if (active_isa() == Isa::avx2) return avx2::dot(x, y);
#endif
  return scalar::dot(x, y);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
#if defined(AVGAN_HAVE_AVX2)
  if (active_isa() == Isa::avx2) {
    avx2::axpy(alpha, x, y);
    return;
  }
#endif
  scalar::axpy(alpha, x, y);
}

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, const AdamStep& step) {
#if defined(AVGAN_HAVE_AVX2)
  if (active_isa() == Isa::avx2) {
    avx2::adam_update(param, grad, m, v, step);
    return;
  }
#endif
  scalar::adam_update(param, grad, m, v, step);
}

}  // namespace avgan::kernels
