#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sranet/volume.hpp"

// Volume preprocessing: intensity normalization, resampling, coarse bone
// masks from classical image processing, and the patch grid shared by the
// model and every exporter.
namespace sranet::volprep {

/// Zero mean, unit population standard deviation. Volumes whose standard
/// deviation is below 1e-8 map to all zeros.
Volume normalize_volume(const Volume& volume);

/// Brings each axis to the target extent: longer axes are resampled with
/// linear interpolation (half-voxel-centred sampling, i.e. source coordinate
/// (i + 0.5) * src / dst - 0.5), shorter axes are zero-padded symmetrically
/// with the odd voxel going to the high side.
Volume resize_pad(const Volume& volume, const Dims& target);

/// Mask counterpart of resize_pad: nearest-neighbour sampling, zero padding.
MaskVolume resize_pad(const MaskVolume& mask, const Dims& target);

/// 255 where value > (mean over the block^3 neighbourhood) + offset, else 0.
/// Neighbourhoods are edge-clamped (replicated border). `block` must be odd
/// and at least 3.
MaskVolume adaptive_threshold(const Volume& volume, std::size_t block, double offset);

/// Erosion / dilation by the (2r+1)^3 cube. Voxels outside the volume count
/// as background.
MaskVolume erode(const MaskVolume& mask, std::size_t radius);
MaskVolume dilate(const MaskVolume& mask, std::size_t radius);

struct MaskConfig {
  std::size_t block = 41;
  double offset = 10.0;  // in units of the 0..255 rescaled intensity
  std::size_t radius = 1;
  double min_fraction = 0.0;
};

/// Coarse bone-tissue mask: rescale intensities to 0..255, adaptive
/// threshold, then a morphological opening (erode, dilate) with `radius`.
MaskVolume make_mask(const Volume& volume, const MaskConfig& config);

/// P x P x P partition of a volume. Patch i sits at grid cell
/// (i / P^2, (i / P) % P, i % P), i.e. lexicographic (z, y, x) block order.
struct PatchGrid {
  std::size_t per_axis = 1;
  Dims volume;
  Dims patch;

  struct Cell {
    std::size_t gz, gy, gx;
    bool operator==(const Cell&) const = default;
  };

  std::size_t count() const { return per_axis * per_axis * per_axis; }
  Cell cell(std::size_t index) const {
    return Cell{index / (per_axis * per_axis), (index / per_axis) % per_axis, index % per_axis};
  }
  std::size_t index(const Cell& c) const { return (c.gz * per_axis + c.gy) * per_axis + c.gx; }
};

/// Throws std::invalid_argument unless P divides every dimension.
PatchGrid make_patch_grid(const Dims& dims, std::size_t per_axis);

template <typename V>
std::vector<Grid<V>> split_patches(const Grid<V>& volume, std::size_t per_axis);

template <typename V>
Grid<V> reassemble(std::span<const Grid<V>> patches, std::size_t per_axis);

/// 1 if the fraction of foreground voxels exceeds `min_fraction` (with the
/// default 0: any foreground voxel at all), else 0.
std::uint8_t patch_indicator(const MaskVolume& patch, double min_fraction = 0.0);

/// patch_indicator over every cell of the grid, canonical order.
std::vector<std::uint8_t> structure_vector(const MaskVolume& mask, std::size_t per_axis,
                                           double min_fraction = 0.0);

}  // namespace sranet::volprep
