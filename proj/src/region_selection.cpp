#include "avgan/region_selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "avgan/error.hpp"
#include "avgan/ops.hpp"

namespace avgan::regions {
namespace {

Tensor flatten_grid(const Tensor& x) {
  if (x.rank() == 2) return x;
  if (x.rank() != 3) throw InvalidInput("expected C' x h x w or C' x L, got " + shape_string(x.shape()));
  return reshape(x, Shape{x.dim(0), x.dim(1) * x.dim(2)});
}

}  // namespace

Tensor QKVEmbedder::Encoder::operator()(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) {
      h = leaky_relu(h, 0.2);
    } else if (bounded) {
      h = sigmoid(h);
    }
  }
  return h;
}

QKVEmbedder::Encoder QKVEmbedder::make_encoder(const std::string& name, bool bounded, Rng& rng) const {
  Encoder enc;
  enc.bounded = bounded;
  int in = 3;
  // Four stride-2 stages give the x16 reduction.
  for (int i = 0; i < 4; ++i) {
    const int out = i == 3 ? config_.embed_channels : config_.hidden_channels;
    enc.layers.push_back(
        make_conv(enc.store, name + ".conv" + std::to_string(i), in, out, 3, 2, 1, rng, true, 0.2));
    in = out;
  }
  return enc;
}

QKVEmbedder::QKVEmbedder(const EmbedderConfig& config, Rng& rng) : config_(config) {
  if (config.hidden_channels <= 0 || config.embed_channels <= 0 || config.attention_pool <= 0) {
    throw InvalidInput("embedder channel counts and attention_pool must be positive");
  }
  query_ = make_encoder("query", false, rng);
  key_ = make_encoder("key", false, rng);
  value_ = make_encoder("value", true, rng);
}

QKVEmbedding QKVEmbedder::embed(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw InvalidInput("embed_qkv expects 3 x H x W, got " + shape_string(image.shape()));
  }
  const int factor = kEncoderDownsample * config_.attention_pool;
  if (image.dim(1) % factor != 0 || image.dim(2) % factor != 0) {
    throw InvalidInput("embed_qkv: spatial size " + shape_string(image.shape()) + " not divisible by " +
                       std::to_string(factor));
  }
  QKVEmbedding e;
  e.xq = query_(image);
  e.xk = key_(image);
  e.xv = value_(image);
  e.xq_red = avg_pool(e.xq, config_.attention_pool);
  e.xk_red = avg_pool(e.xk, config_.attention_pool);
  e.xv_red = avg_pool(e.xv, config_.attention_pool);
  return e;
}

std::vector<Tensor> QKVEmbedder::parameters() const {
  std::vector<Tensor> out = query_.store.tensors();
  for (const Tensor& t : key_.store.tensors()) out.push_back(t);
  for (const Tensor& t : value_.store.tensors()) out.push_back(t);
  return out;
}

Tensor attention_map(const Tensor& xq_red, const Tensor& xk_red) {
  const Tensor q = flatten_grid(xq_red);
  const Tensor k = flatten_grid(xk_red);
  if (q.shape() != k.shape()) {
    throw InvalidInput("attention_map: query " + shape_string(q.shape()) + " vs key " + shape_string(k.shape()));
  }
  return softmax_rows(matmul(transpose(q), k));
}

Tensor importance(const Tensor& attention, const Tensor& xv_red) {
  const Tensor v = flatten_grid(xv_red);
  if (attention.rank() != 2 || attention.dim(1) != v.dim(1)) {
    throw InvalidInput("importance: attention " + shape_string(attention.shape()) + " vs value " +
                       shape_string(v.shape()));
  }
  return mean_cols(matmul(attention, transpose(v)));
}

GateOutput gate(const Tensor& importance_scores, double theta) {
  GateOutput g;
  g.m = sigmoid(scale(add_scalar(importance_scores, -theta), kGateSharpness));
  g.gated = mul(g.m, importance_scores);
  return g;
}

AttentionState attend(const QKVEmbedding& embedding, double theta) {
  AttentionState s;
  s.attention = attention_map(embedding.xq_red, embedding.xk_red);
  s.importance = importance(s.attention, embedding.xv_red);
  GateOutput g = gate(s.importance, theta);
  s.m = g.m;
  s.gated = g.gated;
  s.theta = theta;
  return s;
}

std::vector<int> top_n(std::span<const double> values, int n) {
  const int len = static_cast<int>(values.size());
  if (n < 1 || n > len) {
    throw InvalidInput("top-n: n=" + std::to_string(n) + " outside [1, " + std::to_string(len) + "]");
  }
  std::vector<int> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return values[static_cast<std::size_t>(a)] > values[static_cast<std::size_t>(b)];
  });
  idx.resize(static_cast<std::size_t>(n));
  return idx;
}

RegionCoord cell_to_corner(int cell, int grid_h, int grid_w, int region_size, ImageDims image) {
  if (region_size <= 0 || region_size > std::min(image.height, image.width)) {
    throw InvalidInput("region_size " + std::to_string(region_size) + " does not fit the image");
  }
  const int r = cell / grid_w;
  const int c = cell % grid_w;
  const double stride_y = static_cast<double>(image.height) / grid_h;
  const double stride_x = static_cast<double>(image.width) / grid_w;
  const double half = region_size / 2.0;
  const int top = static_cast<int>(std::floor((r + 0.5) * stride_y - half));
  const int left = static_cast<int>(std::floor((c + 0.5) * stride_x - half));
  return {std::clamp(top, 0, image.height - region_size), std::clamp(left, 0, image.width - region_size)};
}

std::vector<RegionCoord> select_regions(std::span<const double> gated, int n, int region_size,
                                        int grid_h, int grid_w, ImageDims image) {
  if (static_cast<std::size_t>(grid_h) * grid_w != gated.size()) {
    throw InvalidInput("select_regions: score count does not match the grid");
  }
  std::vector<RegionCoord> coords;
  for (int cell : top_n(gated, n)) coords.push_back(cell_to_corner(cell, grid_h, grid_w, region_size, image));
  return coords;
}

std::vector<Tensor> crop_regions(const Tensor& image, const std::vector<RegionCoord>& coords, int size) {
  std::vector<Tensor> out;
  out.reserve(coords.size());
  for (const RegionCoord& c : coords) out.push_back(crop(image, c.row, c.col, size, size));
  return out;
}

std::vector<RegionCoord> fixed_regions(int n, int region_size, ImageDims image) {
  if (n < 1 || n > 3) throw InvalidInput("fixed regions support n in [1, 3]");
  if (region_size <= 0 || region_size > std::min(image.height, image.width)) {
    throw InvalidInput("region_size " + std::to_string(region_size) + " does not fit the image");
  }
  const double h = image.height;
  const double w = image.width;
  const std::vector<std::pair<double, double>> centres{{h / 2, w / 2}, {h / 4, w / 4}, {3 * h / 4, 3 * w / 4}};
  std::vector<RegionCoord> coords;
  for (int i = 0; i < n; ++i) {
    const auto [cy, cx] = centres[static_cast<std::size_t>(i)];
    const int top = static_cast<int>(std::floor(cy - region_size / 2.0));
    const int left = static_cast<int>(std::floor(cx - region_size / 2.0));
    coords.push_back({std::clamp(top, 0, image.height - region_size), std::clamp(left, 0, image.width - region_size)});
  }
  return coords;
}

RegionSet select_key_regions(const QKVEmbedder& embedder, const Tensor& image, int n, int region_size,
                             double theta) {
  const QKVEmbedding emb = embedder.embed(image);
  const AttentionState state = attend(emb, theta);
  RegionSet set;
  set.size = region_size;
  set.grid_indices = top_n(state.gated.data(), n);
  const ImageDims dims{image.dim(1), image.dim(2)};
  for (int cell : set.grid_indices) {
    set.coords.push_back(cell_to_corner(cell, emb.grid_h(), emb.grid_w(), region_size, dims));
  }
  set.regions = crop_regions(image, set.coords, region_size);
  set.weights = take(state.m, set.grid_indices);
  return set;
}

RegionSet make_fixed_region_set(const Tensor& image, int n, int region_size) {
  RegionSet set;
  set.size = region_size;
  set.coords = fixed_regions(n, region_size, {image.dim(1), image.dim(2)});
  set.regions = crop_regions(image, set.coords, region_size);
  return set;
}

}  // namespace avgan::regions
