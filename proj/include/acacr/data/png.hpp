#pragma once

// 8-bit PNG previews via libpng's simplified API. Lossy by construction:
// values in [0, 1] are quantised to round(v * 255).

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "acacr/tensor/tensor.hpp"

namespace acacr {

struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 1 (gray) or 3 (rgb)
  std::vector<std::uint8_t> pixels;
};

inline void write_png(const std::filesystem::path& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw Error("write_png: only gray or rgb images are supported");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw IoError("write_png: " + path.string() + ": " + image.message);
  }
}

inline Image8 read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw IoError("read_png: " + path.string() + ": " + image.message);
  }
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 out{image.width, image.height, gray ? 1u : 3u, {}};
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("read_png: " + path.string() + ": " + image.message);
  }
  return out;
}

template <Real T>
Image8 to_image8(const Tensor<T>& x) {
  if (x.rank() != 3 || (x.dim(2) != 1 && x.dim(2) != 3)) {
    throw ShapeError("to_image8: need [H, W, 1] or [H, W, 3], got " + shape_string(x.shape()));
  }
  Image8 img{x.dim(1), x.dim(0), x.dim(2), std::vector<std::uint8_t>(x.size())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = std::clamp(static_cast<double>(x[i]), 0.0, 1.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

template <Real T>
Tensor<T> from_image8(const Image8& img) {
  Tensor<T> x({img.height, img.width, img.channels});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<T>(img.pixels[i]) / T(255);
  return x;
}

template <Real T>
void save_png_preview(const std::filesystem::path& path, const Tensor<T>& x) {
  write_png(path, to_image8(x));
}

template <Real T>
Tensor<T> load_png(const std::filesystem::path& path) {
  return from_image8<T>(read_png(path));
}

}  // namespace acacr
