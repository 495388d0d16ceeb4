#include <png.h>

#include <cmath>
#include <cstdio>

#include "avgan/data.hpp"
#include "avgan/error.hpp"

namespace avgan::data {

Image8 read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Image8 out;
  out.height = static_cast<int>(img.height);
  out.width = static_cast<int>(img.width);
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * 3) {
    throw InvalidInput("write_png: pixel buffer does not match dimensions");
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

Tensor to_tensor(const Image8& image) {
  const std::size_t hw = static_cast<std::size_t>(image.height) * image.width;
  std::vector<double> v(3 * hw);
  for (std::size_t p = 0; p < hw; ++p) {
    for (int c = 0; c < 3; ++c) v[c * hw + p] = image.pixels[3 * p + c] / 255.0;
  }
  return Tensor(Shape{3, image.height, image.width}, std::move(v));
}

Image8 from_tensor(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw InvalidInput("from_tensor expects 3 x H x W, got " + shape_string(rgb.shape()));
  Image8 out;
  out.height = rgb.dim(1);
  out.width = rgb.dim(2);
  const std::size_t hw = static_cast<std::size_t>(out.height) * out.width;
  out.pixels.resize(3 * hw);
  const auto d = rgb.data();
  for (std::size_t p = 0; p < hw; ++p) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::round(std::clamp(d[c * hw + p], 0.0, 1.0) * 255.0);
      out.pixels[3 * p + c] = static_cast<std::uint8_t>(v);
    }
  }
  return out;
}

std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv1a(const std::string& text) { return fnv1a(text.data(), text.size()); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace avgan::data
