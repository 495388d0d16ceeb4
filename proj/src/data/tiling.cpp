#include "avgan/data.hpp"
#include "avgan/error.hpp"
#include "avgan/ops.hpp"

namespace avgan::data {

void TilingSpec::validate() const {
  if (patch_size <= 0 || stride <= 0) throw InvalidInput("tiling: patch_size and stride must be positive");
  if (stride > patch_size) throw InvalidInput("tiling: stride must not exceed patch_size");
}

int tile_count(int dim, const TilingSpec& spec) {
  spec.validate();
  if (dim < spec.patch_size) {
    throw InvalidInput("image dimension " + std::to_string(dim) + " is smaller than patch size " +
                       std::to_string(spec.patch_size));
  }
  return (dim - spec.patch_size) / spec.stride + 1;
}

std::vector<Tile> tile_image(const Image8& image, const TilingSpec& spec) {
  const int rows = tile_count(image.height, spec);
  const int cols = tile_count(image.width, spec);
  const int p = spec.patch_size;
  std::vector<Tile> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      Tile t;
      t.row = r * spec.stride;
      t.col = c * spec.stride;
      t.image.height = p;
      t.image.width = p;
      t.image.pixels.resize(static_cast<std::size_t>(p) * p * 3);
      for (int y = 0; y < p; ++y) {
        const auto* src = image.pixels.data() + (static_cast<std::size_t>(t.row + y) * image.width + t.col) * 3;
        std::copy(src, src + p * 3, t.image.pixels.data() + static_cast<std::size_t>(y) * p * 3);
      }
      out.push_back(std::move(t));
    }
  }
  return out;
}

std::vector<Tensor> tile_image(const Tensor& image, const TilingSpec& spec) {
  if (image.rank() != 3) throw InvalidInput("tile_image expects C x H x W");
  const int rows = tile_count(image.dim(1), spec);
  const int cols = tile_count(image.dim(2), spec);
  std::vector<Tensor> out;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out.push_back(crop(image, r * spec.stride, c * spec.stride, spec.patch_size, spec.patch_size));
  }
  return out;
}

}  // namespace avgan::data
