// Compiled with -mavx2 -mfma; only reached through dispatch after a CPUID check.

#include <immintrin.h>

#include <cmath>
#include <vector>

#include "avgan/kernels.hpp"

namespace avgan::kernels::avx2 {
namespace {

// 4 rows x 8 columns of C, accumulated over the full k extent.
inline void kernel_4x8(int k, const double* a, int lda, const double* b, int ldb, double* c,
                       int ldc, bool accumulate) {
  __m256d c00, c01, c10, c11, c20, c21, c30, c31;
  if (accumulate) {
    c00 = _mm256_loadu_pd(c);
    c01 = _mm256_loadu_pd(c + 4);
    c10 = _mm256_loadu_pd(c + ldc);
    c11 = _mm256_loadu_pd(c + ldc + 4);
    c20 = _mm256_loadu_pd(c + 2 * ldc);
    c21 = _mm256_loadu_pd(c + 2 * ldc + 4);
    c30 = _mm256_loadu_pd(c + 3 * ldc);
    c31 = _mm256_loadu_pd(c + 3 * ldc + 4);
  } else {
    c00 = c01 = c10 = c11 = c20 = c21 = c30 = c31 = _mm256_setzero_pd();
  }
  const double* a0 = a;
  const double* a1 = a + lda;
  const double* a2 = a + 2 * lda;
  const double* a3 = a + 3 * lda;
  for (int p = 0; p < k; ++p) {
    const double* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
    const __m256d b0 = _mm256_loadu_pd(brow);
    const __m256d b1 = _mm256_loadu_pd(brow + 4);
    __m256d av = _mm256_broadcast_sd(a0 + p);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a1 + p);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a2 + p);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a3 + p);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  _mm256_storeu_pd(c, c00);
  _mm256_storeu_pd(c + 4, c01);
  _mm256_storeu_pd(c + ldc, c10);
  _mm256_storeu_pd(c + ldc + 4, c11);
  _mm256_storeu_pd(c + 2 * ldc, c20);
  _mm256_storeu_pd(c + 2 * ldc + 4, c21);
  _mm256_storeu_pd(c + 3 * ldc, c30);
  _mm256_storeu_pd(c + 3 * ldc + 4, c31);
}

// Up to 4 rows x 4 columns.
inline void kernel_rx4(int rows, int k, const double* a, int lda, const double* b, int ldb,
                       double* c, int ldc, bool accumulate) {
  __m256d acc[4];
  for (int r = 0; r < rows; ++r) {
    acc[r] = accumulate ? _mm256_loadu_pd(c + r * ldc) : _mm256_setzero_pd();
  }
  for (int p = 0; p < k; ++p) {
    const __m256d bv = _mm256_loadu_pd(b + static_cast<std::ptrdiff_t>(p) * ldb);
    for (int r = 0; r < rows; ++r) {
      acc[r] = _mm256_fmadd_pd(_mm256_broadcast_sd(a + r * lda + p), bv, acc[r]);
    }
  }
  for (int r = 0; r < rows; ++r) _mm256_storeu_pd(c + r * ldc, acc[r]);
}

// Up to 4 rows x 1 column.
inline void kernel_rx1(int rows, int k, const double* a, int lda, const double* b, int ldb,
                       double* c, int ldc, bool accumulate) {
  for (int r = 0; r < rows; ++r) {
    double acc = accumulate ? c[r * ldc] : 0.0;
    for (int p = 0; p < k; ++p) {
      acc = std::fma(a[r * lda + p], b[static_cast<std::ptrdiff_t>(p) * ldb], acc);
    }
    c[r * ldc] = acc;
  }
}

void gemm_nn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c,
             int ldc, bool accumulate) {
  // Column panel outer so the k x 8 slice of B stays hot across row blocks.
  int j = 0;
  for (; j + 8 <= n; j += 8) {
    int i = 0;
    for (; i + 4 <= m; i += 4) {
      kernel_4x8(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
    }
    if (i < m) {
      const int rows = m - i;
      kernel_rx4(rows, k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
      kernel_rx4(rows, k, a + i * lda, lda, b + j + 4, ldb, c + i * ldc + j + 4, ldc, accumulate);
    }
  }
  for (; j + 4 <= n; j += 4) {
    for (int i = 0; i < m; i += 4) {
      const int rows = m - i < 4 ? m - i : 4;
      kernel_rx4(rows, k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
    }
  }
  for (; j < n; ++j) {
    for (int i = 0; i < m; i += 4) {
      const int rows = m - i < 4 ? m - i : 4;
      kernel_rx1(rows, k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
    }
  }
}

std::vector<double> transpose_copy(const double* src, int rows, int cols, int ld) {
  // src is rows x cols with stride ld; result is cols x rows, dense.
  std::vector<double> out(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(c) * rows + r] = src[r * ld + c];
  }
  return out;
}

}  // namespace

double dot(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  __m256d s2 = _mm256_setzero_pd();
  __m256d s3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(&x[i]), _mm256_loadu_pd(&y[i]), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(&x[i + 4]), _mm256_loadu_pd(&y[i + 4]), s1);
    s2 = _mm256_fmadd_pd(_mm256_loadu_pd(&x[i + 8]), _mm256_loadu_pd(&y[i + 8]), s2);
    s3 = _mm256_fmadd_pd(_mm256_loadu_pd(&x[i + 12]), _mm256_loadu_pd(&y[i + 12]), s3);
  }
  for (; i + 4 <= n; i += 4) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(&x[i]), _mm256_loadu_pd(&y[i]), s0);
  }
  const __m256d s = _mm256_add_pd(_mm256_add_pd(s0, s1), _mm256_add_pd(s2, s3));
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, s);
  double acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) acc = std::fma(x[i], y[i], acc);
  return acc;
}

void gemm(Trans trans_a, Trans trans_b, int m, int n, int k, const double* a, int lda,
          const double* b, int ldb, double* c, int ldc, bool accumulate) {
  if (m <= 0 || n <= 0) return;
  if (trans_a == Trans::no && trans_b == Trans::yes) {
    // Both operands are read along contiguous rows.
    for (int i = 0; i < m; ++i) {
      std::span<const double> arow(a + static_cast<std::ptrdiff_t>(i) * lda, k);
      double* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
      for (int j = 0; j < n; ++j) {
        const double v = dot(arow, std::span<const double>(b + static_cast<std::ptrdiff_t>(j) * ldb, k));
        crow[j] = accumulate ? crow[j] + v : v;
      }
    }
    return;
  }
  std::vector<double> a_packed;
  std::vector<double> b_packed;
  const double* a_nn = a;
  const double* b_nn = b;
  int lda_nn = lda;
  int ldb_nn = ldb;
  if (trans_a == Trans::yes) {
    a_packed = transpose_copy(a, k, m, lda);
    a_nn = a_packed.data();
    lda_nn = k;
  }
  if (trans_b == Trans::yes) {
    b_packed = transpose_copy(b, n, k, ldb);
    b_nn = b_packed.data();
    ldb_nn = n;
  }
  gemm_nn(m, n, k, a_nn, lda_nn, b_nn, ldb_nn, c, ldc, accumulate);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  const std::size_t n = x.size();
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(av, _mm256_loadu_pd(&x[i]));
    _mm256_storeu_pd(&y[i], _mm256_add_pd(_mm256_loadu_pd(&y[i]), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, const AdamStep& s) {
  // Same operation order as the scalar kernel and no FMA, so results are bitwise equal.
  const std::size_t n = param.size();
  const __m256d b1 = _mm256_set1_pd(s.beta1);
  const __m256d b2 = _mm256_set1_pd(s.beta2);
  const __m256d omb1 = _mm256_set1_pd(1.0 - s.beta1);
  const __m256d omb2 = _mm256_set1_pd(1.0 - s.beta2);
  const __m256d bc1 = _mm256_set1_pd(s.bias_correction1);
  const __m256d bc2 = _mm256_set1_pd(s.bias_correction2);
  const __m256d lr = _mm256_set1_pd(s.lr);
  const __m256d eps = _mm256_set1_pd(s.eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(&grad[i]);
    __m256d mv = _mm256_loadu_pd(&m[i]);
    __m256d vv = _mm256_loadu_pd(&v[i]);
    mv = _mm256_add_pd(_mm256_mul_pd(b1, mv), _mm256_mul_pd(omb1, g));
    vv = _mm256_add_pd(_mm256_mul_pd(b2, vv), _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(&m[i], mv);
    _mm256_storeu_pd(&v[i], vv);
    const __m256d m_hat = _mm256_div_pd(mv, bc1);
    const __m256d v_hat = _mm256_div_pd(vv, bc2);
    const __m256d upd =
        _mm256_div_pd(_mm256_mul_pd(lr, m_hat), _mm256_add_pd(_mm256_sqrt_pd(v_hat), eps));
    _mm256_storeu_pd(&param[i], _mm256_sub_pd(_mm256_loadu_pd(&param[i]), upd));
  }
  if (i < n) {
    scalar::adam_update(param.subspan(i), grad.subspan(i), m.subspan(i), v.subspan(i), s);
  }
}

}  // namespace avgan::kernels::avx2
