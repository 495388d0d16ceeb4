#pragma once

// RGB <-> HED stain space by colour deconvolution.
//
// Row-vector convention: optical density od = -log10(max(rgb, floor)) and
// od = hed * M, where M's rows are the H, E and D stain vectors. Hence
// hed = od * M^-1 and rgb = 10^-(hed * M). All conversions are built from
// differentiable ops so losses can backpropagate through them.

#include <array>
#include <string>

#include "avgan/tensor.hpp"

namespace avgan::color {

using StainMatrix = std::array<std::array<double, 3>, 3>;

inline constexpr double kOpticalDensityFloor = 1e-6;

/// Ruifrok & Johnston H&E-DAB stain vectors (rows H, E, D).
StainMatrix ruifrok_johnston();
StainMatrix invert(const StainMatrix& m);
/// Nine numbers, row-major, rows H, E, D; separated by commas and/or spaces.
StainMatrix parse_stain_matrix(const std::string& text);
std::string format_stain_matrix(const StainMatrix& m);

struct HEDImage {
  Tensor h;  // 1 x H x W
  Tensor e;
  Tensor d;

  int height() const { return h.dim(1); }
  int width() const { return h.dim(2); }
  /// 3 x H x W, channels in H, E, D order.
  Tensor stacked() const;
};

HEDImage rgb_to_hed(const Tensor& rgb, const StainMatrix& stains = ruifrok_johnston());
Tensor hed_to_rgb(const HEDImage& hed, const StainMatrix& stains = ruifrok_johnston());
/// Same as hed_to_rgb but from a stacked 3 x H x W tensor.
Tensor hed_to_rgb(const Tensor& hed_stacked, const StainMatrix& stains = ruifrok_johnston());
/// Hematoxylin concentration map (1 x H x W) of an RGB image.
Tensor h_channel(const Tensor& rgb, const StainMatrix& stains = ruifrok_johnston());

}  // namespace avgan::color
