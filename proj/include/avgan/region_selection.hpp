#pragma once

// Attention-based key region selection.
//
// Three independent encoders map the full-resolution patch to query, key and
// value maps at 1/16 resolution, which are average-pooled further (default
// x4) to an h x w grid with L = h * w cells. The attention map
// A = softmax_rows(Q^T K) (L x L) mixes the value map, the mix is averaged
// over channels into one importance score per cell, and a steep sigmoid gate
// m = sigmoid(1000 (P - theta)) produces the gated scores P' = m * P. The
// top-n cells of P' become square crops of the input. Cropping is discrete;
// the gate values of the selected cells carry gradient back to the encoders.

#include <span>
#include <vector>

#include "avgan/nn.hpp"
#include "avgan/tensor.hpp"

namespace avgan::regions {

inline constexpr double kGateSharpness = 1000.0;
inline constexpr int kEncoderDownsample = 16;

struct EmbedderConfig {
  int hidden_channels = 8;
  int embed_channels = 8;  // C'
  int attention_pool = 4;
};

struct QKVEmbedding {
  Tensor xq, xk, xv;           // C' x H/16 x W/16
  Tensor xq_red, xk_red, xv_red;  // C' x h x w
  int grid_h() const { return xq_red.dim(1); }
  int grid_w() const { return xq_red.dim(2); }
};

class QKVEmbedder {
 public:
  QKVEmbedder(const EmbedderConfig& config, Rng& rng);

  /// Image must be C x H x W with H and W divisible by 16 * attention_pool.
  QKVEmbedding embed(const Tensor& image) const;

  const ParamStore& query_params() const { return query_.store; }
  const ParamStore& key_params() const { return key_.store; }
  const ParamStore& value_params() const { return value_.store; }
  std::vector<Tensor> parameters() const;
  const EmbedderConfig& config() const { return config_; }

 private:
  struct Encoder {
    ParamStore store;
    std::vector<Conv2d> layers;
    bool bounded = false;  // value maps end in a sigmoid
    Tensor operator()(const Tensor& x) const;
  };
  Encoder make_encoder(const std::string& name, bool bounded, Rng& rng) const;

  EmbedderConfig config_;
  Encoder query_;
  Encoder key_;
  Encoder value_;
};

/// Attention over grid cells. Accepts C' x h x w or already-flattened C' x L.
Tensor attention_map(const Tensor& xq_red, const Tensor& xk_red);

/// Channel-averaged importance: mean over C' of A * xv'^T, shape [L].
Tensor importance(const Tensor& attention, const Tensor& xv_red);

struct GateOutput {
  Tensor m;      // [L], in (0, 1)
  Tensor gated;  // [L], m * P
};

GateOutput gate(const Tensor& importance_scores, double theta);

struct AttentionState {
  Tensor attention;
  Tensor importance;
  Tensor m;
  Tensor gated;
  double theta = 0.0;
};

AttentionState attend(const QKVEmbedding& embedding, double theta);

/// Indices of the n largest values, descending; equal values keep index order.
std::vector<int> top_n(std::span<const double> values, int n);

struct RegionCoord {
  int row = 0;  // top-left corner, full-resolution pixels
  int col = 0;
  bool operator==(const RegionCoord&) const = default;
};

struct RegionSet {
  std::vector<RegionCoord> coords;
  int size = 0;
  std::vector<Tensor> regions;    // size x size crops, in coords order
  std::vector<int> grid_indices;  // selected cells; empty for fixed regions
  Tensor weights;                 // gate value per region, [n]; undefined when fixed
};

struct ImageDims {
  int height = 0;
  int width = 0;
};

/// Maps the top-n cells of the gated scores to clamped crop corners.
std::vector<RegionCoord> select_regions(std::span<const double> gated, int n, int region_size,
                                        int grid_h, int grid_w, ImageDims image);

/// Corner of a size x size window centred on a cell, clamped into the image.
RegionCoord cell_to_corner(int cell, int grid_h, int grid_w, int region_size, ImageDims image);

std::vector<Tensor> crop_regions(const Tensor& image, const std::vector<RegionCoord>& coords, int size);

/// Deterministic baseline anchors: image centre, then the top-left quadrant
/// centre, then the bottom-right quadrant centre.
std::vector<RegionCoord> fixed_regions(int n, int region_size, ImageDims image);

/// Full attention path: embed, attend, select, crop.
RegionSet select_key_regions(const QKVEmbedder& embedder, const Tensor& image, int n,
                             int region_size, double theta);

RegionSet make_fixed_region_set(const Tensor& image, int n, int region_size);

}  // namespace avgan::regions
