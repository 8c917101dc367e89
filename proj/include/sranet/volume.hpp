#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sranet {

struct Dims {
  std::size_t d = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t count() const { return d * h * w; }
  bool operator==(const Dims&) const = default;
};

inline std::string to_string(const Dims& dims) {
  return std::to_string(dims.d) + "x" + std::to_string(dims.h) + "x" + std::to_string(dims.w);
}

/// Row-major 3D grid (z slowest, x fastest).
template <typename V>
class Grid {
 public:
  using value_type = V;

  Grid() = default;

  explicit Grid(Dims dims, V fill = V(0)) : dims_(dims), voxels_(dims.count(), fill) {
    if (dims.d == 0 || dims.h == 0 || dims.w == 0) {
      throw std::invalid_argument("grid dimensions must be positive, got " + to_string(dims));
    }
  }

  Grid(Dims dims, std::vector<V> voxels) : dims_(dims), voxels_(std::move(voxels)) {
    if (dims.d == 0 || dims.h == 0 || dims.w == 0) {
      throw std::invalid_argument("grid dimensions must be positive, got " + to_string(dims));
    }
    if (voxels_.size() != dims.count()) {
      throw std::invalid_argument("voxel buffer of length " + std::to_string(voxels_.size()) +
                                  " does not match " + to_string(dims));
    }
  }

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return voxels_.size(); }

  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const {
    return (z * dims_.h + y) * dims_.w + x;
  }
  V& at(std::size_t z, std::size_t y, std::size_t x) { return voxels_[index(z, y, x)]; }
  const V& at(std::size_t z, std::size_t y, std::size_t x) const { return voxels_[index(z, y, x)]; }

  std::vector<V>& voxels() { return voxels_; }
  const std::vector<V>& voxels() const { return voxels_; }

  bool operator==(const Grid&) const = default;

 private:
  Dims dims_;
  std::vector<V> voxels_;
};

using Volume = Grid<float>;

/// Binary mask; every voxel is 0 or kMaskOn.
using MaskVolume = Grid<std::uint8_t>;

inline constexpr std::uint8_t kMaskOn = 255;

/// Throws unless every voxel of `mask` is 0 or 255.
void validate_mask(const MaskVolume& mask);

}  // namespace sranet
