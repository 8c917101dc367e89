#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sranet/model.hpp"
#include "sranet/volume.hpp"

// Grayscale renderings of a patch attention map.
namespace sranet::exporter {

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// Binary PGM (P5, maxval 255).
void write_pgm(const std::filesystem::path& path, const Image& image);

/// Axial (z) mid-slice of each of the P patch layers, tiled left to right.
/// Intensities are rescaled so the volume's min maps to 0 and max to 255.
Image volume_montage(const Volume& volume, std::size_t per_axis);

/// Same layout as volume_montage; each pixel shows the weight of the patch
/// it falls in, linearly rescaled so the largest a_i is white.
Image attention_montage(const Dims& dims, const model::AttentionMap& attention, std::size_t per_axis);

}  // namespace sranet::exporter
