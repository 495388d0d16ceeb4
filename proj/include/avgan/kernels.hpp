#pragma once

// Hot inner loops of the tensor engine.
//
// Every kernel has a scalar reference implementation and, where the build
// and the host allow it, an AVX2/FMA variant. The active variant is chosen
// once at first use (environment variable AVGAN_SIMD=scalar|avx2|auto) and
// can be switched explicitly by tests. A given process always uses one
// variant, so seeded runs stay bit-reproducible.

#include <cstddef>
#include <span>
#include <string_view>

namespace avgan::kernels {

enum class Isa { scalar, avx2 };

enum class Trans { no, yes };

struct AdamStep {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double bias_correction1;  // 1 - beta1^t
  double bias_correction2;  // 1 - beta2^t
};

/// True if the variant is compiled in and the CPU can run it.
bool isa_supported(Isa isa);
Isa active_isa();
void set_active_isa(Isa isa);
std::string_view isa_name(Isa isa);

// Row-major GEMM: C (=|+=) op(A) * op(B), op(A) is m x k, op(B) is k x n.
// lda/ldb/ldc are the row strides of the stored (untransposed) matrices.
void gemm(Trans trans_a, Trans trans_b, int m, int n, int k, const double* a, int lda,
          const double* b, int ldb, double* c, int ldc, bool accumulate);

double dot(std::span<const double> x, std::span<const double> y);

/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// In-place Adam update (no weight decay). `m` and `v` are the moment buffers.
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, const AdamStep& step);

// Direct entry points, used by the equivalence tests.
namespace scalar {
void gemm(Trans trans_a, Trans trans_b, int m, int n, int k, const double* a, int lda,
          const double* b, int ldb, double* c, int ldc, bool accumulate);
double dot(std::span<const double> x, std::span<const double> y);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, const AdamStep& step);
}  // namespace scalar

#if defined(AVGAN_HAVE_AVX2)
namespace avx2 {
void gemm(Trans trans_a, Trans trans_b, int m, int n, int k, const double* a, int lda,
          const double* b, int ldb, double* c, int ldc, bool accumulate);
double dot(std::span<const double> x, std::span<const double> y);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, const AdamStep& step);
}  // namespace avx2
#endif

}  // namespace avgan::kernels
