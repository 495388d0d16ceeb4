#pragma once

// Differentiable operations over Tensor. Image ops take and return C x H x W.

#include <array>
#include <vector>

#include "avgan/tensor.hpp"

namespace avgan {

// ---- elementwise ----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
/// max(x, floor); the gradient passes where x > floor.
Tensor clamp_min(const Tensor& x, double floor);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// ---- reductions and indexing ---------------------------------------------
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
/// Elements at flat indices, result shape {indices.size()}.
Tensor take(const Tensor& x, const std::vector<int>& indices);
/// Stack scalars (or single-element tensors) into a vector.
Tensor stack_scalars(const std::vector<Tensor>& xs);

// ---- matrices (rank 2, row-major) ------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
/// Mean over the second dimension: [m, n] -> [m].
Tensor mean_cols(const Tensor& a);
/// [m, n] + bias[m] broadcast along columns.
Tensor add_row_bias(const Tensor& a, const Tensor& bias);
/// Columns of a [m, n] matrix: result [m, cols.size()].
Tensor select_columns(const Tensor& a, const std::vector<int>& cols);
/// Each column scaled to unit L2 norm (norm floored at eps).
Tensor normalize_columns(const Tensor& a, double eps = 1e-7);

// ---- images (C x H x W) -------------------------------------------------------
/// w: O x C x k x k, bias: O or undefined. Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding);
Tensor reflect_pad(const Tensor& x, int pad);
Tensor instance_norm(const Tensor& x, double eps = 1e-5);
/// Non-overlapping k x k mean pooling; H and W must be divisible by k.
Tensor avg_pool(const Tensor& x, int k);
Tensor upsample_nearest(const Tensor& x, int factor);
/// Bilinear resampling with half-pixel centres and no antialiasing.
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
Tensor crop(const Tensor& x, int top, int left, int h, int w);
Tensor slice_channels(const Tensor& x, int first, int count);
Tensor concat_channels(const std::vector<Tensor>& xs);
Tensor channel_mean(const Tensor& x);
Tensor channel_max(const Tensor& x);
/// x (C x H x W) times mask (1 x H x W), broadcast over channels.
Tensor mul_spatial(const Tensor& x, const Tensor& mask);
/// Per pixel row-vector product: out[j] = sum_i x[i] * m[i][j] (3 channels).
Tensor channel_mix3(const Tensor& x, const std::array<std::array<double, 3>, 3>& m);

}  // namespace avgan
