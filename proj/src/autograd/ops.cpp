#include "avgan/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "avgan/error.hpp"
#include "avgan/kernels.hpp"

namespace avgan {
namespace {

using detail::Node;

bool wants(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }
std::span<double> gbuf(Node& self, std::size_t i) { return self.inputs[i]->grad_buffer(); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidInput(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                       shape_string(b.shape()));
  }
}

void require_rank(const Tensor& x, int r, const char* op) {
  if (x.rank() != r) {
    throw InvalidInput(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                       shape_string(x.shape()));
  }
}

// Unary elementwise op with derivative expressed through input and output.
template <class F, class D>
Tensor unary(const Tensor& x, F f, D dfdx) {
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return Tensor::from_op(x.shape(), std::move(out), {x}, [dfdx](Node& self) {
    auto& xin = self.inputs[0]->value;
    auto g = gbuf(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(xin[i], self.value[i]);
  });
}

}  // namespace

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (wants(self, k)) kernels::axpy(1.0, self.grad, gbuf(self, k));
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0)) kernels::axpy(1.0, self.grad, gbuf(self, 0));
    if (wants(self, 1)) kernels::axpy(-1.0, self.grad, gbuf(self, 1));
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& xa = self.inputs[0]->value;
    const auto& xb = self.inputs[1]->value;
    if (wants(self, 0)) {
      auto g = gbuf(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * xb[i];
    }
    if (wants(self, 1)) {
      auto g = gbuf(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * xa[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  return Tensor::from_op(a.shape(), std::move(out), {a},
                         [s](Node& self) { kernels::axpy(s, self.grad, gbuf(self, 0)); });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + s;
  return Tensor::from_op(a.shape(), std::move(out), {a},
                         [](Node& self) { kernels::axpy(1.0, self.grad, gbuf(self, 0)); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor clamp_min(const Tensor& x, double floor) {
  return unary(
      x, [floor](double v) { return v > floor ? v : floor; },
      [floor](double v, double) { return v > floor ? 1.0 : 0.0; });
}

// ---- reductions and indexing ---------------------------------------------

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return Tensor::from_op(Shape{}, {acc}, {x}, [](Node& self) {
    auto g = gbuf(self, 0);
    const double s = self.grad[0];
    for (double& v : g) v += s;
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw InvalidInput("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw InvalidInput("reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  return Tensor::from_op(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()),
                         {x}, [](Node& self) { kernels::axpy(1.0, self.grad, gbuf(self, 0)); });
}

Tensor take(const Tensor& x, const std::vector<int>& indices) {
  std::vector<double> out(indices.size());
  auto in = x.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || static_cast<std::size_t>(indices[i]) >= in.size()) {
      throw InvalidInput("take: index out of range");
    }
    out[i] = in[static_cast<std::size_t>(indices[i])];
  }
  return Tensor::from_op(Shape{static_cast<int>(indices.size())}, std::move(out), {x},
                         [indices](Node& self) {
                           auto g = gbuf(self, 0);
                           for (std::size_t i = 0; i < indices.size(); ++i) {
                             g[static_cast<std::size_t>(indices[i])] += self.grad[i];
                           }
                         });
}

Tensor stack_scalars(const std::vector<Tensor>& xs) {
  std::vector<double> out;
  out.reserve(xs.size());
  for (const Tensor& t : xs) out.push_back(t.item());
  return Tensor::from_op(Shape{static_cast<int>(xs.size())}, std::move(out), xs, [](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      if (wants(self, i)) gbuf(self, i)[0] += self.grad[i];
    }
  });
}

// ---- matrices ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = a.dim(0);
  const int k = a.dim(1);
  const int n = b.dim(1);
  if (b.dim(0) != k) {
    throw InvalidInput("matmul: inner dimension mismatch " + shape_string(a.shape()) + " x " +
                       shape_string(b.shape()));
  }
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  kernels::gemm(kernels::Trans::no, kernels::Trans::no, m, n, k, a.data().data(), k,
                b.data().data(), n, out.data(), n, false);
  return Tensor::from_op(Shape{m, n}, std::move(out), {a, b}, [m, n, k](Node& self) {
    const double* av = self.inputs[0]->value.data();
    const double* bv = self.inputs[1]->value.data();
    if (wants(self, 0)) {  // dA = dC B^T
      kernels::gemm(kernels::Trans::no, kernels::Trans::yes, m, k, n, self.grad.data(), n, bv, n,
                    gbuf(self, 0).data(), k, true);
    }
    if (wants(self, 1)) {  // dB = A^T dC
      kernels::gemm(kernels::Trans::yes, kernels::Trans::no, k, n, m, av, k, self.grad.data(), n,
                    gbuf(self, 1).data(), n, true);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const int m = a.dim(0);
  const int n = a.dim(1);
  std::vector<double> out(a.numel());
  auto in = a.data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = in[static_cast<std::size_t>(i) * n + j];
  }
  return Tensor::from_op(Shape{n, m}, std::move(out), {a}, [m, n](Node& self) {
    auto g = gbuf(self, 0);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) g[static_cast<std::size_t>(i) * n + j] += self.grad[static_cast<std::size_t>(j) * m + i];
    }
  });
}

Tensor softmax_rows(const Tensor& a) {
  require_rank(a, 2, "softmax_rows");
  const int m = a.dim(0);
  const int n = a.dim(1);
  std::vector<double> out(a.numel());
  auto in = a.data();
  for (int i = 0; i < m; ++i) {
    const double* row = in.data() + static_cast<std::size_t>(i) * n;
    double* o = out.data() + static_cast<std::size_t>(i) * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += (o[j] = std::exp(row[j] - mx));
    for (int j = 0; j < n; ++j) o[j] /= z;
  }
  return Tensor::from_op(a.shape(), std::move(out), {a}, [m, n](Node& self) {
    auto g = gbuf(self, 0);
    for (int i = 0; i < m; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * n;
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += self.grad[base + j] * self.value[base + j];
      for (int j = 0; j < n; ++j) g[base + j] += self.value[base + j] * (self.grad[base + j] - s);
    }
  });
}

Tensor log_softmax_rows(const Tensor& a) {
  require_rank(a, 2, "log_softmax_rows");
  const int m = a.dim(0);
  const int n = a.dim(1);
  std::vector<double> out(a.numel());
  auto in = a.data();
  for (int i = 0; i < m; ++i) {
    const double* row = in.data() + static_cast<std::size_t>(i) * n;
    double* o = out.data() + static_cast<std::size_t>(i) * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (int j = 0; j < n; ++j) o[j] = row[j] - lse;
  }
  return Tensor::from_op(a.shape(), std::move(out), {a}, [m, n](Node& self) {
    auto g = gbuf(self, 0);
    for (int i = 0; i < m; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * n;
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += self.grad[base + j];
      for (int j = 0; j < n; ++j) g[base + j] += self.grad[base + j] - std::exp(self.value[base + j]) * s;
    }
  });
}

Tensor mean_cols(const Tensor& a) {
  require_rank(a, 2, "mean_cols");
  const int m = a.dim(0);
  const int n = a.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m));
  auto in = a.data();
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += in[static_cast<std::size_t>(i) * n + j];
    out[static_cast<std::size_t>(i)] = s / n;
  }
  return Tensor::from_op(Shape{m}, std::move(out), {a}, [m, n](Node& self) {
    auto g = gbuf(self, 0);
    for (int i = 0; i < m; ++i) {
      const double gi = self.grad[static_cast<std::size_t>(i)] / n;
      for (int j = 0; j < n; ++j) g[static_cast<std::size_t>(i) * n + j] += gi;
    }
  });
}

Tensor add_row_bias(const Tensor& a, const Tensor& bias) {
  require_rank(a, 2, "add_row_bias");
  const int m = a.dim(0);
  const int n = a.dim(1);
  if (bias.numel() != static_cast<std::size_t>(m)) throw InvalidInput("add_row_bias: bias size mismatch");
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bv = bias.data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] += bv[static_cast<std::size_t>(i)];
  }
  return Tensor::from_op(a.shape(), std::move(out), {a, bias}, [m, n](Node& self) {
    if (wants(self, 0)) kernels::axpy(1.0, self.grad, gbuf(self, 0));
    if (wants(self, 1)) {
      auto g = gbuf(self, 1);
      for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += self.grad[static_cast<std::size_t>(i) * n + j];
        g[static_cast<std::size_t>(i)] += s;
      }
    }
  });
}

Tensor select_columns(const Tensor& a, const std::vector<int>& cols) {
  require_rank(a, 2, "select_columns");
  const int m = a.dim(0);
  const int n = a.dim(1);
  const int k = static_cast<int>(cols.size());
  for (int c : cols) {
    if (c < 0 || c >= n) throw InvalidInput("select_columns: column out of range");
  }
  std::vector<double> out(static_cast<std::size_t>(m) * k);
  auto in = a.data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < k; ++j) {
      out[static_cast<std::size_t>(i) * k + j] = in[static_cast<std::size_t>(i) * n + cols[static_cast<std::size_t>(j)]];
    }
  }
  return Tensor::from_op(Shape{m, k}, std::move(out), {a}, [m, n, k, cols](Node& self) {
    auto g = gbuf(self, 0);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < k; ++j) {
        g[static_cast<std::size_t>(i) * n + cols[static_cast<std::size_t>(j)]] += self.grad[static_cast<std::size_t>(i) * k + j];
      }
    }
  });
}

Tensor normalize_columns(const Tensor& a, double eps) {
  require_rank(a, 2, "normalize_columns");
  const int m = a.dim(0);
  const int n = a.dim(1);
  auto in = a.data();
  std::vector<double> norms(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      const double v = in[static_cast<std::size_t>(i) * n + j];
      norms[static_cast<std::size_t>(j)] += v * v;
    }
  }
  for (double& v : norms) v = std::max(std::sqrt(v), eps);
  std::vector<double> out(a.numel());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out[static_cast<std::size_t>(i) * n + j] = in[static_cast<std::size_t>(i) * n + j] / norms[static_cast<std::size_t>(j)];
    }
  }
  return Tensor::from_op(a.shape(), std::move(out), {a}, [m, n, eps, norms](Node& self) {
    auto g = gbuf(self, 0);
    const auto& x = self.inputs[0]->value;
    for (int j = 0; j < n; ++j) {
      const double nj = norms[static_cast<std::size_t>(j)];
      if (nj <= eps) {
        for (int i = 0; i < m; ++i) g[static_cast<std::size_t>(i) * n + j] += self.grad[static_cast<std::size_t>(i) * n + j] / nj;
        continue;
      }
      // d(x/|x|) = (g - y (y.g)) / |x|
      double yg = 0.0;
      for (int i = 0; i < m; ++i) yg += self.value[static_cast<std::size_t>(i) * n + j] * self.grad[static_cast<std::size_t>(i) * n + j];
      for (int i = 0; i < m; ++i) {
        const std::size_t idx = static_cast<std::size_t>(i) * n + j;
        g[idx] += (self.grad[idx] - self.value[idx] * yg) / nj;
      }
      (void)x;
    }
  });
}

// ---- images ---------------------------------------------------------------

namespace {

struct ConvGeometry {
  int c, h, w, o, k, stride, pad, out_h, out_w;
  int patch() const { return c * k * k; }
  int positions() const { return out_h * out_w; }
};

// Columns for output rows [row0, row0 + rows): col is patch() x (rows * out_w).
void im2col(const double* x, const ConvGeometry& g, int row0, int rows, double* col) {
  const int ncols = rows * g.out_w;
  for (int c = 0; c < g.c; ++c) {
    const double* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* dst = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * ncols;
        for (int r = 0; r < rows; ++r) {
          const int iy = (row0 + r) * g.stride - g.pad + ky;
          double* d = dst + static_cast<std::size_t>(r) * g.out_w;
          if (iy < 0 || iy >= g.h) {
            std::fill(d, d + g.out_w, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            d[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, int row0, int rows, double* dx) {
  const int ncols = rows * g.out_w;
  for (int c = 0; c < g.c; ++c) {
    double* xc = dx + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* srcrow = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * ncols;
        for (int r = 0; r < rows; ++r) {
          const int iy = (row0 + r) * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const double* s = srcrow + static_cast<std::size_t>(r) * g.out_w;
          double* d = xc + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) d[ix] += s[ox];
          }
        }
      }
    }
  }
}

int rows_per_chunk(const ConvGeometry& g) {
  constexpr std::size_t kTargetColumnElements = 1 << 16;
  const std::size_t per_row = static_cast<std::size_t>(g.patch()) * g.out_w;
  return static_cast<int>(std::clamp<std::size_t>(kTargetColumnElements / std::max<std::size_t>(per_row, 1), 1,
                                                  static_cast<std::size_t>(g.out_h)));
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding) {
  require_rank(x, 3, "conv2d");
  require_rank(w, 4, "conv2d weight");
  if (w.dim(1) != x.dim(0) || w.dim(2) != w.dim(3)) {
    throw InvalidInput("conv2d: weight " + shape_string(w.shape()) + " incompatible with input " +
                       shape_string(x.shape()));
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2), stride, padding, 0, 0};
  g.out_h = (g.h + 2 * padding - g.k) / stride + 1;
  g.out_w = (g.w + 2 * padding - g.k) / stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0 || g.h + 2 * padding < g.k || g.w + 2 * padding < g.k) {
    throw InvalidInput("conv2d: input " + shape_string(x.shape()) + " too small for kernel");
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != static_cast<std::size_t>(g.o)) throw InvalidInput("conv2d: bias size");

  const int n = g.positions();
  const int kdim = g.patch();
  std::vector<double> out(static_cast<std::size_t>(g.o) * n);
  const int chunk = rows_per_chunk(g);
  std::vector<double> col(static_cast<std::size_t>(kdim) * chunk * g.out_w);
  for (int row0 = 0; row0 < g.out_h; row0 += chunk) {
    const int rows = std::min(chunk, g.out_h - row0);
    const int ncols = rows * g.out_w;
    im2col(x.data().data(), g, row0, rows, col.data());
    kernels::gemm(kernels::Trans::no, kernels::Trans::no, g.o, ncols, kdim, w.data().data(), kdim,
                  col.data(), ncols, out.data() + static_cast<std::size_t>(row0) * g.out_w, n, false);
  }
  if (has_bias) {
    auto b = bias.data();
    for (int o = 0; o < g.o; ++o) {
      double* row = out.data() + static_cast<std::size_t>(o) * n;
      for (int i = 0; i < n; ++i) row[i] += b[static_cast<std::size_t>(o)];
    }
  }

  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return Tensor::from_op(Shape{g.o, g.out_h, g.out_w}, std::move(out), inputs, [g, has_bias](Node& self) {
    const int n = g.positions();
    const int kdim = g.patch();
    const double* dout = self.grad.data();
    if (has_bias && wants(self, 2)) {
      auto gb = gbuf(self, 2);
      for (int o = 0; o < g.o; ++o) {
        double s = 0.0;
        const double* row = dout + static_cast<std::size_t>(o) * n;
        for (int i = 0; i < n; ++i) s += row[i];
        gb[static_cast<std::size_t>(o)] += s;
      }
    }
    const bool need_dx = wants(self, 0);
    const bool need_dw = wants(self, 1);
    if (!need_dx && !need_dw) return;
    const double* xv = self.inputs[0]->value.data();
    const double* wv = self.inputs[1]->value.data();
    double* dx = need_dx ? gbuf(self, 0).data() : nullptr;
    double* dw = need_dw ? gbuf(self, 1).data() : nullptr;
    const int chunk = rows_per_chunk(g);
    std::vector<double> col(static_cast<std::size_t>(kdim) * chunk * g.out_w);
    std::vector<double> dcol(need_dx ? col.size() : 0);
    for (int row0 = 0; row0 < g.out_h; row0 += chunk) {
      const int rows = std::min(chunk, g.out_h - row0);
      const int ncols = rows * g.out_w;
      const double* dchunk = dout + static_cast<std::size_t>(row0) * g.out_w;
      if (need_dw) {
        im2col(xv, g, row0, rows, col.data());
        kernels::gemm(kernels::Trans::no, kernels::Trans::yes, g.o, kdim, ncols, dchunk, n, col.data(),
                      ncols, dw, kdim, true);
      }
      if (need_dx) {
        kernels::gemm(kernels::Trans::yes, kernels::Trans::no, kdim, ncols, g.o, wv, kdim, dchunk, n,
                      dcol.data(), ncols, false);
        col2im_add(dcol.data(), g, row0, rows, dx);
      }
    }
  });
}

Tensor reflect_pad(const Tensor& x, int pad) {
  require_rank(x, 3, "reflect_pad");
  const int c = x.dim(0);
  const int h = x.dim(1);
  const int w = x.dim(2);
  if (pad >= h || pad >= w) throw InvalidInput("reflect_pad: pad must be smaller than spatial size");
  const int oh = h + 2 * pad;
  const int ow = w + 2 * pad;
  auto reflect = [](int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
  };
  std::vector<int> src_y(static_cast<std::size_t>(oh));
  std::vector<int> src_x(static_cast<std::size_t>(ow));
  for (int i = 0; i < oh; ++i) src_y[static_cast<std::size_t>(i)] = reflect(i - pad, h);
  for (int i = 0; i < ow; ++i) src_x[static_cast<std::size_t>(i)] = reflect(i - pad, w);
  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);
  auto in = x.data();
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        out[(static_cast<std::size_t>(ch) * oh + y) * ow + xx] =
            in[(static_cast<std::size_t>(ch) * h + src_y[static_cast<std::size_t>(y)]) * w + src_x[static_cast<std::size_t>(xx)]];
      }
    }
  }
  return Tensor::from_op(Shape{c, oh, ow}, std::move(out), {x}, [c, h, w, oh, ow, src_y, src_x](Node& self) {
    auto g = gbuf(self, 0);
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
          g[(static_cast<std::size_t>(ch) * h + src_y[static_cast<std::size_t>(y)]) * w + src_x[static_cast<std::size_t>(xx)]] +=
              self.grad[(static_cast<std::size_t>(ch) * oh + y) * ow + xx];
        }
      }
    }
  });
}

Tensor instance_norm(const Tensor& x, double eps) {
  require_rank(x, 3, "instance_norm");
  const int c = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  std::vector<double> out(x.numel());
  std::vector<double> inv_std(static_cast<std::size_t>(c));
  auto in = x.data();
  for (int ch = 0; ch < c; ++ch) {
    const double* p = in.data() + ch * hw;
    double mu = 0.0;
    for (std::size_t i = 0; i < hw; ++i) mu += p[i];
    mu /= static_cast<double>(hw);
    double var = 0.0;
    for (std::size_t i = 0; i < hw; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= static_cast<double>(hw);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(ch)] = is;
    double* o = out.data() + ch * hw;
    for (std::size_t i = 0; i < hw; ++i) o[i] = (p[i] - mu) * is;
  }
  return Tensor::from_op(x.shape(), std::move(out), {x}, [c, hw, inv_std](Node& self) {
    auto g = gbuf(self, 0);
    for (int ch = 0; ch < c; ++ch) {
      const double* dy = self.grad.data() + ch * hw;
      const double* y = self.value.data() + ch * hw;
      double mdy = 0.0;
      double mdyy = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        mdy += dy[i];
        mdyy += dy[i] * y[i];
      }
      mdy /= static_cast<double>(hw);
      mdyy /= static_cast<double>(hw);
      const double is = inv_std[static_cast<std::size_t>(ch)];
      double* gx = g.data() + ch * hw;
      for (std::size_t i = 0; i < hw; ++i) gx[i] += is * (dy[i] - mdy - y[i] * mdyy);
    }
  });
}

Tensor avg_pool(const Tensor& x, int k) {
  require_rank(x, 3, "avg_pool");
  const int c = x.dim(0);
  const int h = x.dim(1);
  const int w = x.dim(2);
  if (k <= 0 || h % k != 0 || w % k != 0) {
    throw InvalidInput("avg_pool: " + shape_string(x.shape()) + " not divisible by " + std::to_string(k));
  }
  const int oh = h / k;
  const int ow = w / k;
  const double inv = 1.0 / (k * k);
  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow, 0.0);
  auto in = x.data();
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        out[(static_cast<std::size_t>(ch) * oh + y / k) * ow + xx / k] += in[(static_cast<std::size_t>(ch) * h + y) * w + xx];
      }
    }
  }
  for (double& v : out) v *= inv;
  return Tensor::from_op(Shape{c, oh, ow}, std::move(out), {x}, [c, h, w, k, oh, ow, inv](Node& self) {
    auto g = gbuf(self, 0);
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
          g[(static_cast<std::size_t>(ch) * h + y) * w + xx] += inv * self.grad[(static_cast<std::size_t>(ch) * oh + y / k) * ow + xx / k];
        }
      }
    }
  });
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  require_rank(x, 3, "upsample_nearest");
  const int c = x.dim(0);
  const int h = x.dim(1);
  const int w = x.dim(2);
  const int oh = h * factor;
  const int ow = w * factor;
  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);
  auto in = x.data();
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        out[(static_cast<std::size_t>(ch) * oh + y) * ow + xx] = in[(static_cast<std::size_t>(ch) * h + y / factor) * w + xx / factor];
      }
    }
  }
  return Tensor::from_op(Shape{c, oh, ow}, std::move(out), {x}, [c, h, w, factor, oh, ow](Node& self) {
    auto g = gbuf(self, 0);
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
          g[(static_cast<std::size_t>(ch) * h + y / factor) * w + xx / factor] += self.grad[(static_cast<std::size_t>(ch) * oh + y) * ow + xx];
        }
      }
    }
  });
}

namespace {
struct Tap {
  int i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    double src = (d + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<std::size_t>(d)] = {i0, i1, src - i0};
  }
  return taps;
}
}  // namespace

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
  require_rank(x, 3, "resize_bilinear");
  if (out_h <= 0 || out_w <= 0) throw InvalidInput("resize_bilinear: non-positive output size");
  const int c = x.dim(0);
  const int h = x.dim(1);
  const int w = x.dim(2);
  if (h == out_h && w == out_w) return reshape(x, x.shape());
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  std::vector<double> out(static_cast<std::size_t>(c) * out_h * out_w);
  auto in = x.data();
  for (int ch = 0; ch < c; ++ch) {
    const double* p = in.data() + static_cast<std::size_t>(ch) * h * w;
    for (int y = 0; y < out_h; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      const double* r0 = p + static_cast<std::size_t>(a.i0) * w;
      const double* r1 = p + static_cast<std::size_t>(a.i1) * w;
      for (int xx = 0; xx < out_w; ++xx) {
        const Tap& b = tx[static_cast<std::size_t>(xx)];
        const double top = (1.0 - b.w1) * r0[b.i0] + b.w1 * r0[b.i1];
        const double bot = (1.0 - b.w1) * r1[b.i0] + b.w1 * r1[b.i1];
        out[(static_cast<std::size_t>(ch) * out_h + y) * out_w + xx] = (1.0 - a.w1) * top + a.w1 * bot;
      }
    }
  }
  return Tensor::from_op(Shape{c, out_h, out_w}, std::move(out), {x}, [c, h, w, out_h, out_w, ty, tx](Node& self) {
    auto g = gbuf(self, 0);
    for (int ch = 0; ch < c; ++ch) {
      double* p = g.data() + static_cast<std::size_t>(ch) * h * w;
      for (int y = 0; y < out_h; ++y) {
        const Tap& a = ty[static_cast<std::size_t>(y)];
        for (int xx = 0; xx < out_w; ++xx) {
          const Tap& b = tx[static_cast<std::size_t>(xx)];
          const double go = self.grad[(static_cast<std::size_t>(ch) * out_h + y) * out_w + xx];
          const double gt = (1.0 - a.w1) * go;
          const double gb = a.w1 * go;
          p[static_cast<std::size_t>(a.i0) * w + b.i0] += (1.0 - b.w1) * gt;
          p[static_cast<std::size_t>(a.i0) * w + b.i1] += b.w1 * gt;
          p[static_cast<std::size_t>(a.i1) * w + b.i0] += (1.0 - b.w1) * gb;
          p[static_cast<std::size_t>(a.i1) * w + b.i1] += b.w1 * gb;
        }
      }
    }
  });
}

Tensor crop(const Tensor& x, int top, int left, int h, int w) {
  require_rank(x, 3, "crop");
  const int c = x.dim(0);
  const int ih = x.dim(1);
  const int iw = x.dim(2);
  if (top < 0 || left < 0 || h <= 0 || w <= 0 || top + h > ih || left + w > iw) {
    throw InvalidInput("crop window (" + std::to_string(top) + "," + std::to_string(left) + ") size " +
                       std::to_string(h) + "x" + std::to_string(w) + " outside " + shape_string(x.shape()));
  }
  std::vector<double> out(static_cast<std::size_t>(c) * h * w);
  auto in = x.data();
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      const double* src = in.data() + (static_cast<std::size_t>(ch) * ih + top + y) * iw + left;
      std::copy(src, src + w, out.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(ch) * h + y) * w));
    }
  }
  return Tensor::from_op(Shape{c, h, w}, std::move(out), {x}, [c, h, w, ih, iw, top, left](Node& self) {
    auto g = gbuf(self, 0);
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < h; ++y) {
        double* dst = g.data() + (static_cast<std::size_t>(ch) * ih + top + y) * iw + left;
        const double* src = self.grad.data() + (static_cast<std::size_t>(ch) * h + y) * w;
        for (int xx = 0; xx < w; ++xx) dst[xx] += src[xx];
      }
    }
  });
}

Tensor slice_channels(const Tensor& x, int first, int count) {
  require_rank(x, 3, "slice_channels");
  if (first < 0 || count <= 0 || first + count > x.dim(0)) throw InvalidInput("slice_channels: range");
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  auto in = x.data();
  std::vector<double> out(in.begin() + static_cast<std::ptrdiff_t>(first * plane),
                          in.begin() + static_cast<std::ptrdiff_t>((first + count) * plane));
  return Tensor::from_op(Shape{count, x.dim(1), x.dim(2)}, std::move(out), {x}, [first, plane](Node& self) {
    auto g = gbuf(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[first * plane + i] += self.grad[i];
  });
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw InvalidInput("concat_channels: no inputs");
  const int h = xs[0].dim(1);
  const int w = xs[0].dim(2);
  int c = 0;
  std::vector<double> out;
  for (const Tensor& t : xs) {
    require_rank(t, 3, "concat_channels");
    if (t.dim(1) != h || t.dim(2) != w) throw InvalidInput("concat_channels: spatial mismatch");
    c += t.dim(0);
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  return Tensor::from_op(Shape{c, h, w}, std::move(out), xs, [](Node& self) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      const std::size_t n = self.inputs[i]->value.size();
      if (wants(self, i)) {
        kernels::axpy(1.0, std::span<const double>(self.grad.data() + offset, n), gbuf(self, i));
      }
      offset += n;
    }
  });
}

Tensor channel_mean(const Tensor& x) {
  require_rank(x, 3, "channel_mean");
  const int c = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  std::vector<double> out(plane, 0.0);
  auto in = x.data();
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) out[i] += in[ch * plane + i];
  }
  for (double& v : out) v /= c;
  return Tensor::from_op(Shape{1, x.dim(1), x.dim(2)}, std::move(out), {x}, [c, plane](Node& self) {
    auto g = gbuf(self, 0);
    for (int ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < plane; ++i) g[ch * plane + i] += self.grad[i] / c;
    }
  });
}

Tensor channel_max(const Tensor& x) {
  require_rank(x, 3, "channel_max");
  const int c = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  std::vector<double> out(plane);
  std::vector<int> arg(plane, 0);
  auto in = x.data();
  for (std::size_t i = 0; i < plane; ++i) {
    double best = in[i];
    for (int ch = 1; ch < c; ++ch) {
      if (in[ch * plane + i] > best) {
        best = in[ch * plane + i];
        arg[i] = ch;
      }
    }
    out[i] = best;
  }
  return Tensor::from_op(Shape{1, x.dim(1), x.dim(2)}, std::move(out), {x}, [plane, arg](Node& self) {
    auto g = gbuf(self, 0);
    for (std::size_t i = 0; i < plane; ++i) g[static_cast<std::size_t>(arg[i]) * plane + i] += self.grad[i];
  });
}

Tensor mul_spatial(const Tensor& x, const Tensor& mask) {
  require_rank(x, 3, "mul_spatial");
  if (mask.rank() != 3 || mask.dim(0) != 1 || mask.dim(1) != x.dim(1) || mask.dim(2) != x.dim(2)) {
    throw InvalidInput("mul_spatial: mask " + shape_string(mask.shape()) + " vs " + shape_string(x.shape()));
  }
  const int c = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  std::vector<double> out(x.numel());
  auto in = x.data();
  auto m = mask.data();
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] = in[ch * plane + i] * m[i];
  }
  return Tensor::from_op(x.shape(), std::move(out), {x, mask}, [c, plane](Node& self) {
    const auto& xv = self.inputs[0]->value;
    const auto& mv = self.inputs[1]->value;
    if (wants(self, 0)) {
      auto g = gbuf(self, 0);
      for (int ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < plane; ++i) g[ch * plane + i] += self.grad[ch * plane + i] * mv[i];
      }
    }
    if (wants(self, 1)) {
      auto g = gbuf(self, 1);
      for (int ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < plane; ++i) g[i] += self.grad[ch * plane + i] * xv[ch * plane + i];
      }
    }
  });
}

Tensor channel_mix3(const Tensor& x, const std::array<std::array<double, 3>, 3>& m) {
  require_rank(x, 3, "channel_mix3");
  if (x.dim(0) != 3) throw InvalidInput("channel_mix3: expected 3 channels, got " + shape_string(x.shape()));
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < plane; ++i) {
    const double a = in[i];
    const double b = in[plane + i];
    const double c = in[2 * plane + i];
    for (int j = 0; j < 3; ++j) out[j * plane + i] = a * m[0][j] + b * m[1][j] + c * m[2][j];
  }
  return Tensor::from_op(x.shape(), std::move(out), {x}, [plane, m](Node& self) {
    auto g = gbuf(self, 0);
    for (std::size_t i = 0; i < plane; ++i) {
      const double g0 = self.grad[i];
      const double g1 = self.grad[plane + i];
      const double g2 = self.grad[2 * plane + i];
      for (int r = 0; r < 3; ++r) g[r * plane + i] += g0 * m[r][0] + g1 * m[r][1] + g2 * m[r][2];
    }
  });
}

}  // namespace avgan
