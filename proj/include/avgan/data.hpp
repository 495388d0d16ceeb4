#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "avgan/color_space.hpp"
#include "avgan/nn.hpp"
#include "avgan/tensor.hpp"

namespace avgan::data {

// ---- 8-bit RGB images -------------------------------------------------------

struct Image8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major

  bool operator==(const Image8&) const = default;
};

Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

/// 3 x H x W in [0, 1].
Tensor to_tensor(const Image8& image);
/// Rounds to nearest and clamps into [0, 255].
Image8 from_tensor(const Tensor& rgb);

/// FNV-1a 64-bit.
std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t seed = 14695981039346656037ull);
std::uint64_t fnv1a(const std::string& text);
std::string hex64(std::uint64_t v);

// ---- tiling -----------------------------------------------------------------

struct TilingSpec {
  int patch_size = 512;
  int stride = 64;

  void validate() const;
};

/// Tiles per axis: floor((dim - patch) / stride) + 1.
int tile_count(int dim, const TilingSpec& spec);

struct Tile {
  int row = 0;  // top-left corner
  int col = 0;
  Image8 image;
};

/// Row-major windows at every (r * stride, c * stride) that fits.
std::vector<Tile> tile_image(const Image8& image, const TilingSpec& spec);
/// Tensor variant; returns 3 x patch x patch crops.
std::vector<Tensor> tile_image(const Tensor& image, const TilingSpec& spec);

// ---- synthetic pseudo-histology ------------------------------------------

struct SyntheticStyle {
  std::string name;
  double nucleus_density = 6.0;               // blobs per 10^4 px^2
  std::array<double, 3> stain_profile{};      // weights on H, E, D concentrations
  std::uint64_t texture_seed = 0;
};

/// Built-in styles: "he", "mt", "pas". All share the hematoxylin weight.
SyntheticStyle builtin_style(const std::string& name);
std::vector<std::string> builtin_style_names();

/// Image `index` of a style. The nucleus layout and stroma texture depend
/// only on (seed, index, density), so equal indices across styles share
/// their structure.
Image8 render_synthetic(const SyntheticStyle& style, int index, int size, std::uint64_t seed);

struct SyntheticPair {
  std::vector<Image8> a;
  std::vector<Image8> b;
};

SyntheticPair make_synthetic_pair_domains(const SyntheticStyle& a, const SyntheticStyle& b, int count,
                                          std::uint64_t seed, int size = 256);

struct SynthOptions {
  std::filesystem::path data_dir = "data";
  std::string source = "he";
  std::vector<std::string> targets{"mt"};
  int count = 64;
  int test_count = -1;  // default count / 4
  int size = 256;
  std::uint64_t seed = 0;
};

/// Writes data/<domain>/{train,test}/<domain>_NNNNN.png and manifest.json.
/// Returns the manifest hash.
std::string write_synthetic_dataset(const SynthOptions& options);

std::string image_filename(const std::string& domain, int index);

// ---- loading ------------------------------------------------------------------

struct NamedImage {
  std::string name;
  Image8 image;
};

/// All *.png files of a directory in lexicographic order. Decoding uses
/// AVGAN_NUM_WORKERS threads (default 1); the result order never depends on it.
std::vector<NamedImage> load_directory(const std::filesystem::path& dir, bool allow_empty = false);

int num_workers_from_env();

/// Independent uniform sampling from each domain; one epoch is max(|A|, |B|) steps.
class UnpairedLoader {
 public:
  UnpairedLoader(const std::filesystem::path& dir_a, const std::filesystem::path& dir_b);
  UnpairedLoader(std::vector<NamedImage> a, std::vector<NamedImage> b);

  struct Pair {
    std::size_t index_a = 0;
    std::size_t index_b = 0;
    Tensor x;
    Tensor y;
  };

  Pair next(Rng& rng) const;
  std::size_t size_a() const { return a_.size(); }
  std::size_t size_b() const { return b_.size(); }
  std::size_t epoch_length() const { return std::max(a_.size(), b_.size()); }
  const std::vector<NamedImage>& domain_a() const { return a_; }
  const std::vector<NamedImage>& domain_b() const { return b_; }

 private:
  std::vector<NamedImage> a_;
  std::vector<NamedImage> b_;
};

}  // namespace avgan::data
