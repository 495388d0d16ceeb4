#include "avgan/color_space.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <vector>

#include "avgan/error.hpp"
#include "avgan/ops.hpp"

namespace avgan::color {

StainMatrix ruifrok_johnston() {
  return {{{0.65, 0.70, 0.29}, {0.07, 0.99, 0.11}, {0.27, 0.57, 0.78}}};
}

StainMatrix invert(const StainMatrix& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  if (std::fabs(det) < 1e-12) throw InvalidInput("stain matrix is singular");
  const double inv = 1.0 / det;
  StainMatrix r{};
  r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv;
  r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv;
  r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv;
  r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv;
  r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv;
  r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv;
  r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv;
  r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv;
  r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv;
  return r;
}

StainMatrix parse_stain_matrix(const std::string& text) {
  std::string cleaned = text;
  for (char& c : cleaned) {
    if (c == ',' || c == ';') c = ' ';
  }
  std::istringstream is(cleaned);
  std::vector<double> values;
  double v = 0.0;
  while (is >> v) values.push_back(v);
  if (!is.eof() || values.size() != 9) {
    throw InvalidInput("stain_matrix needs nine numbers, got '" + text + "'");
  }
  StainMatrix m{};
  for (int i = 0; i < 9; ++i) m[static_cast<std::size_t>(i / 3)][static_cast<std::size_t>(i % 3)] = values[static_cast<std::size_t>(i)];
  (void)invert(m);
  return m;
}

std::string format_stain_matrix(const StainMatrix& m) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (int i = 0; i < 9; ++i) os << (i ? "," : "") << m[static_cast<std::size_t>(i / 3)][static_cast<std::size_t>(i % 3)];
  return os.str();
}

Tensor HEDImage::stacked() const { return concat_channels({h, e, d}); }

HEDImage rgb_to_hed(const Tensor& rgb, const StainMatrix& stains) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) {
    throw InvalidInput("rgb_to_hed expects a 3-channel image, got " + shape_string(rgb.shape()));
  }
  const Tensor od = scale(log(clamp_min(rgb, kOpticalDensityFloor)), -1.0 / std::numbers::ln10);
  const Tensor hed = relu(channel_mix3(od, invert(stains)));
  return HEDImage{slice_channels(hed, 0, 1), slice_channels(hed, 1, 1), slice_channels(hed, 2, 1)};
}

Tensor hed_to_rgb(const Tensor& hed_stacked, const StainMatrix& stains) {
  if (hed_stacked.rank() != 3 || hed_stacked.dim(0) != 3) {
    throw InvalidInput("hed_to_rgb expects 3 x H x W, got " + shape_string(hed_stacked.shape()));
  }
  const Tensor od = channel_mix3(hed_stacked, stains);
  const Tensor rgb = exp(scale(od, -std::numbers::ln10));
  // min(rgb, 1); exp keeps it positive.
  return sub(rgb, relu(add_scalar(rgb, -1.0)));
}

Tensor hed_to_rgb(const HEDImage& hed, const StainMatrix& stains) {
  if (hed.e.shape() != hed.h.shape() || hed.d.shape() != hed.h.shape()) {
    throw InvalidInput("HED channel maps must share dimensions");
  }
  return hed_to_rgb(hed.stacked(), stains);
}

Tensor h_channel(const Tensor& rgb, const StainMatrix& stains) { return rgb_to_hed(rgb, stains).h; }

}  // namespace avgan::color
