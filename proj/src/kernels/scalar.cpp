#include <cmath>

#include "avgan/kernels.hpp"

namespace avgan::kernels::scalar {

void gemm(Trans trans_a, Trans trans_b, int m, int n, int k, const double* a, int lda,
          const double* b, int ldb, double* c, int ldc, bool accumulate) {
  auto a_at = [&](int i, int p) { return trans_a == Trans::no ? a[i * lda + p] : a[p * lda + i]; };
  auto b_at = [&](int p, int j) { return trans_b == Trans::no ? b[p * ldb + j] : b[j * ldb + p]; };

  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) crow[j] = 0.0;
    }
    if (trans_b == Trans::no) {
      // i-p-j order: each C element still accumulates over p in ascending order.
      for (int p = 0; p < k; ++p) {
        const double aip = a_at(i, p);
        const double* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    } else {
      for (int j = 0; j < n; ++j) {
        double acc = crow[j];
        for (int p = 0; p < k; ++p) acc += a_at(i, p) * b_at(p, j);
        crow[j] = acc;
      }
    }
  }
}

double dot(std::span<const double> x, std::span<const double> y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, const AdamStep& s) {
  const double one_minus_b1 = 1.0 - s.beta1;
  const double one_minus_b2 = 1.0 - s.beta2;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    m[i] = s.beta1 * m[i] + one_minus_b1 * g;
    v[i] = s.beta2 * v[i] + one_minus_b2 * (g * g);
    const double m_hat = m[i] / s.bias_correction1;
    const double v_hat = v[i] / s.bias_correction2;
    param[i] -= s.lr * m_hat / (std::sqrt(v_hat) + s.eps);
  }
}

}  // namespace avgan::kernels::scalar
