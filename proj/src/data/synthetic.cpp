#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "json.hpp"

#include "avgan/data.hpp"
#include "avgan/error.hpp"

namespace avgan::data {
namespace {

// Smooth value noise in [0, 1]: bilinear interpolation of a coarse random grid.
std::vector<double> value_noise(Rng& rng, int size, int cell) {
  const int g = size / cell + 2;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> grid(static_cast<std::size_t>(g) * g);
  for (double& v : grid) v = u(rng);
  std::vector<double> out(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    const double fy = static_cast<double>(y) / cell;
    const int y0 = static_cast<int>(fy);
    const double ty = fy - y0;
    for (int x = 0; x < size; ++x) {
      const double fx = static_cast<double>(x) / cell;
      const int x0 = static_cast<int>(fx);
      const double tx = fx - x0;
      const double a = grid[static_cast<std::size_t>(y0) * g + x0];
      const double b = grid[static_cast<std::size_t>(y0) * g + x0 + 1];
      const double c = grid[static_cast<std::size_t>(y0 + 1) * g + x0];
      const double d = grid[static_cast<std::size_t>(y0 + 1) * g + x0 + 1];
      out[static_cast<std::size_t>(y) * size + x] = (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
    }
  }
  return out;
}

struct Blob {
  double cy, cx, ry, rx, angle, strength;
};

void stamp(std::vector<double>& mask, int size, const Blob& b) {
  const double r = std::max(b.ry, b.rx) + 2.0;
  const int y0 = std::max(0, static_cast<int>(b.cy - r));
  const int y1 = std::min(size - 1, static_cast<int>(b.cy + r));
  const int x0 = std::max(0, static_cast<int>(b.cx - r));
  const int x1 = std::min(size - 1, static_cast<int>(b.cx + r));
  const double ca = std::cos(b.angle);
  const double sa = std::sin(b.angle);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dy = y - b.cy;
      const double dx = x - b.cx;
      const double u = (dx * ca + dy * sa) / b.rx;
      const double v = (-dx * sa + dy * ca) / b.ry;
      const double d = std::sqrt(u * u + v * v);
      // Soft edge over roughly one pixel.
      const double m = std::clamp((1.2 - d) / 0.4, 0.0, 1.0) * b.strength;
      double& dst = mask[static_cast<std::size_t>(y) * size + x];
      dst = std::max(dst, m);
    }
  }
}

}  // namespace

SyntheticStyle builtin_style(const std::string& name) {
  SyntheticStyle s;
  s.name = name;
  if (name == "he") {
    s.stain_profile = {1.0, 1.0, 0.0};
    s.texture_seed = 11;
  } else if (name == "mt") {
    s.stain_profile = {1.0, 0.25, 1.2};
    s.texture_seed = 23;
  } else if (name == "pas") {
    s.stain_profile = {1.0, 0.55, 0.5};
    s.texture_seed = 37;
  } else {
    throw InvalidInput("unknown synthetic style '" + name + "' (expected he, mt or pas)");
  }
  return s;
}

std::vector<std::string> builtin_style_names() { return {"he", "mt", "pas"}; }

Image8 render_synthetic(const SyntheticStyle& style, int index, int size, std::uint64_t seed) {
  if (size < 16) throw InvalidInput("synthetic image size must be at least 16");
  if (style.nucleus_density <= 0) throw InvalidInput("nucleus_density must be positive");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5eedu};
  Rng rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  const std::vector<double> coarse = value_noise(rng, size, 32);
  const std::vector<double> fine = value_noise(rng, size, 6);
  const std::vector<double> fibres = value_noise(rng, size, 12);

  // One glomerulus-like structure: a pale lumen ringed by dense nuclei.
  const double gr = size * (0.10 + 0.06 * u(rng));
  const double gy = gr + u(rng) * (size - 2 * gr);
  const double gx = gr + u(rng) * (size - 2 * gr);

  std::vector<double> mask(static_cast<std::size_t>(size) * size, 0.0);
  const int blobs = static_cast<int>(std::lround(style.nucleus_density * size * size / 1e4));
  for (int i = 0; i < blobs; ++i) {
    Blob b{u(rng) * size, u(rng) * size, 2.5 + 3.0 * u(rng), 2.5 + 3.0 * u(rng),
           u(rng) * std::numbers::pi, 0.7 + 0.3 * u(rng)};
    stamp(mask, size, b);
  }
  const int ring = 10 + static_cast<int>(u(rng) * 6);
  for (int i = 0; i < ring; ++i) {
    const double a = 2 * std::numbers::pi * (i + 0.3 * u(rng)) / ring;
    Blob b{gy + gr * std::sin(a), gx + gr * std::cos(a), 2.5 + 1.5 * u(rng), 2.5 + 1.5 * u(rng),
           u(rng) * std::numbers::pi, 0.9};
    stamp(mask, size, b);
  }

  // Per-domain staining noise touches only E and D so H stays matched.
  Rng stain_rng(style.texture_seed * 1000003ull + static_cast<std::uint64_t>(index));
  std::normal_distribution<double> noise(0.0, 0.01);

  const std::size_t hw = static_cast<std::size_t>(size) * size;
  std::vector<double> hed(3 * hw);
  const auto& w = style.stain_profile;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * size + x;
      const double dg = std::hypot(y - gy, x - gx) / gr;
      const double lumen = std::clamp((0.8 - dg) / 0.2, 0.0, 1.0);
      const double tissue = (0.55 + 0.45 * coarse[p]) * (1.0 - 0.8 * lumen);
      const double m = mask[p];
      const double h = 0.06 + 0.70 * m + 0.04 * fine[p];
      const double e = tissue * (0.20 + 0.30 * fibres[p]) * (1.0 - 0.6 * m);
      const double d = tissue * (0.10 + 0.25 * fine[p]) * (1.0 - 0.5 * m);
      hed[p] = w[0] * h;
      hed[hw + p] = std::max(0.0, w[1] * e + noise(stain_rng));
      hed[2 * hw + p] = std::max(0.0, w[2] * d + noise(stain_rng));
    }
  }
  return from_tensor(color::hed_to_rgb(Tensor(Shape{3, size, size}, std::move(hed))));
}

SyntheticPair make_synthetic_pair_domains(const SyntheticStyle& a, const SyntheticStyle& b, int count,
                                          std::uint64_t seed, int size) {
  if (count < 0) throw InvalidInput("count must be nonnegative");
  SyntheticPair out;
  for (int i = 0; i < count; ++i) {
    out.a.push_back(render_synthetic(a, i, size, seed));
    out.b.push_back(render_synthetic(b, i, size, seed));
  }
  return out;
}

std::string image_filename(const std::string& domain, int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_%05d.png", index);
  return domain + buf;
}

std::string write_synthetic_dataset(const SynthOptions& o) {
  if (o.count < 0) throw InvalidInput("count must be nonnegative");
  const int test_count = o.test_count >= 0 ? o.test_count : o.count / 4;
  std::vector<std::string> domains{o.source};
  for (const auto& t : o.targets) {
    if (std::find(domains.begin(), domains.end(), t) == domains.end()) domains.push_back(t);
  }
  nlohmann::ordered_json manifest;
  manifest["format"] = "avgan-synthetic";
  manifest["version"] = 1;
  manifest["seed"] = o.seed;
  manifest["size"] = o.size;
  manifest["source"] = o.source;
  manifest["targets"] = o.targets;
  const TilingSpec tiling;
  manifest["tiling"] = {{"patch_size", tiling.patch_size}, {"stride", tiling.stride}};
  for (const auto& name : domains) {
    const SyntheticStyle style = builtin_style(name);
    nlohmann::ordered_json entry;
    entry["stain_profile"] = style.stain_profile;
    entry["nucleus_density"] = style.nucleus_density;
    entry["texture_seed"] = style.texture_seed;
    for (const auto& [split, n, offset] : {std::tuple{"train", o.count, 0}, std::tuple{"test", test_count, o.count}}) {
      const auto dir = o.data_dir / name / split;
      std::filesystem::create_directories(dir);
      for (const auto& f : std::filesystem::directory_iterator(dir)) {
        if (f.path().extension() == ".png") std::filesystem::remove(f.path());
      }
      nlohmann::ordered_json files = nlohmann::ordered_json::object();
      for (int i = 0; i < n; ++i) {
        const Image8 img = render_synthetic(style, offset + i, o.size, o.seed);
        const std::string fname = image_filename(name, i);
        write_png(dir / fname, img);
        files[fname] = hex64(fnv1a(img.pixels.data(), img.pixels.size()));
      }
      entry[split] = {{"count", n}, {"files", files}};
    }
    manifest["domains"][name] = entry;
  }
  const std::string text = manifest.dump(2) + "\n";
  std::filesystem::create_directories(o.data_dir);
  std::ofstream(o.data_dir / "manifest.json", std::ios::binary) << text;
  return hex64(fnv1a(text));
}

}  // namespace avgan::data
