#include "sranet/export.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace sranet::exporter {

void write_pgm(const std::filesystem::path& path, const Image& image) {
  if (image.pixels.size() != image.width * image.height) {
    throw std::invalid_argument("write_pgm: pixel buffer does not match " + std::to_string(image.width) + "x" +
                                std::to_string(image.height));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), std::streamsize(image.pixels.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

namespace {

void check_grid(const Dims& dims, std::size_t per_axis) {
  if (per_axis == 0 || dims.d % per_axis || dims.h % per_axis || dims.w % per_axis) {
    throw std::invalid_argument("montage: " + std::to_string(per_axis) + " patches per axis do not divide " +
                                to_string(dims));
  }
}

std::uint8_t to_byte(double unit) { return std::uint8_t(std::lround(std::clamp(unit, 0.0, 1.0) * 255.0)); }

}  // namespace

Image volume_montage(const Volume& volume, std::size_t per_axis) {
  const Dims& d = volume.dims();
  check_grid(d, per_axis);
  const auto [lo, hi] = std::minmax_element(volume.voxels().begin(), volume.voxels().end());
  const double span = double(*hi) - double(*lo);
  const std::size_t depth = d.d / per_axis;
  Image img{per_axis * d.w, d.h, std::vector<std::uint8_t>(per_axis * d.w * d.h, 0)};
  for (std::size_t k = 0; k < per_axis; ++k) {
    const std::size_t z = k * depth + depth / 2;
    for (std::size_t y = 0; y < d.h; ++y) {
      for (std::size_t x = 0; x < d.w; ++x) {
        const double v = span > 0.0 ? (double(volume.at(z, y, x)) - double(*lo)) / span : 0.0;
        img.pixels[y * img.width + k * d.w + x] = to_byte(v);
      }
    }
  }
  return img;
}

Image attention_montage(const Dims& dims, const model::AttentionMap& attention, std::size_t per_axis) {
  check_grid(dims, per_axis);
  if (attention.size() != per_axis * per_axis * per_axis) {
    throw std::invalid_argument("attention_montage: expected " + std::to_string(per_axis * per_axis * per_axis) +
                                " weights, got " + std::to_string(attention.size()));
  }
  const double top = *std::max_element(attention.a.begin(), attention.a.end());
  const std::size_t ph = dims.h / per_axis, pw = dims.w / per_axis;
  Image img{per_axis * dims.w, dims.h, std::vector<std::uint8_t>(per_axis * dims.w * dims.h, 0)};
  for (std::size_t k = 0; k < per_axis; ++k) {
    for (std::size_t y = 0; y < dims.h; ++y) {
      for (std::size_t x = 0; x < dims.w; ++x) {
        const std::size_t i = (k * per_axis + y / ph) * per_axis + x / pw;
        img.pixels[y * img.width + k * dims.w + x] = to_byte(top > 0.0 ? attention.a[i] / top : 0.0);
      }
    }
  }
  return img;
}

}  // namespace sranet::exporter
