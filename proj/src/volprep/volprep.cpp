#include "sranet/volprep.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace sranet {

void validate_mask(const MaskVolume& mask) {
  for (std::uint8_t v : mask.voxels()) {
    if (v != 0 && v != kMaskOn) {
      throw std::invalid_argument("mask voxel value " + std::to_string(v) + " is not 0 or 255");
    }
  }
}

}  // namespace sranet

namespace sranet::volprep {
namespace {

// Applies `fn(line_in, line_out, n, stride)` to every line along `axis`.
template <typename V, typename Fn>
Grid<V> along_axis(const Grid<V>& in, int axis, Fn fn) {
  const Dims& d = in.dims();
  Grid<V> out(d);
  const std::size_t n = axis == 0 ? d.d : axis == 1 ? d.h : d.w;
  const std::size_t stride = axis == 0 ? d.h * d.w : axis == 1 ? d.w : 1;
  std::vector<V> line(n), result(n);
  for (std::size_t z = 0; z < (axis == 0 ? 1 : d.d); ++z) {
    for (std::size_t y = 0; y < (axis == 1 ? 1 : d.h); ++y) {
      for (std::size_t x = 0; x < (axis == 2 ? 1 : d.w); ++x) {
        const std::size_t base = in.index(z, y, x);
        for (std::size_t i = 0; i < n; ++i) line[i] = in.voxels()[base + i * stride];
        fn(line, result);
        for (std::size_t i = 0; i < n; ++i) out.voxels()[base + i * stride] = result[i];
      }
    }
  }
  return out;
}

// Box sum of width 2r+1 with replicated borders.
void clamped_box_sum(const std::vector<double>& line, std::vector<double>& out, std::size_t r) {
  const std::size_t n = line.size();
  std::vector<double> prefix(n + 2 * r + 1, 0.0);
  for (std::size_t k = 0; k < n + 2 * r; ++k) {
    const std::ptrdiff_t src = std::clamp<std::ptrdiff_t>(std::ptrdiff_t(k) - std::ptrdiff_t(r), 0,
                                                          std::ptrdiff_t(n) - 1);
    prefix[k + 1] = prefix[k] + line[std::size_t(src)];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] = prefix[i + 2 * r + 1] - prefix[i];
}

// Min (erode) or max (dilate) over a window of 2r+1; outside counts as 0.
void window_extreme(const std::vector<std::uint8_t>& line, std::vector<std::uint8_t>& out, std::size_t r,
                    bool take_min) {
  const std::ptrdiff_t n = std::ptrdiff_t(line.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    std::uint8_t acc = take_min ? kMaskOn : 0;
    for (std::ptrdiff_t j = i - std::ptrdiff_t(r); j <= i + std::ptrdiff_t(r); ++j) {
      const std::uint8_t v = (j < 0 || j >= n) ? 0 : line[std::size_t(j)];
      acc = take_min ? std::min(acc, v) : std::max(acc, v);
    }
    out[std::size_t(i)] = acc;
  }
}

MaskVolume morphology(const MaskVolume& mask, std::size_t radius, bool take_min) {
  if (radius == 0) throw std::invalid_argument("morphology radius must be at least 1");
  validate_mask(mask);
  MaskVolume current = mask;
  for (int axis = 0; axis < 3; ++axis) {
    current = along_axis(current, axis, [&](const auto& line, auto& out) {
      window_extreme(line, out, radius, take_min);
    });
  }
  return current;
}

// Source coordinate for destination index i when shrinking src -> dst.
double source_coordinate(std::size_t i, std::size_t src, std::size_t dst) {
  const double c = (double(i) + 0.5) * double(src) / double(dst) - 0.5;
  return std::clamp(c, 0.0, double(src - 1));
}

template <typename V, typename Resample>
Grid<V> resize_axis(const Grid<V>& in, int axis, std::size_t target, Resample resample) {
  const Dims& d = in.dims();
  const std::size_t n = axis == 0 ? d.d : axis == 1 ? d.h : d.w;
  if (n == target) return in;
  Dims od = d;
  (axis == 0 ? od.d : axis == 1 ? od.h : od.w) = target;
  Grid<V> out(od);
  const std::size_t in_stride = axis == 0 ? d.h * d.w : axis == 1 ? d.w : 1;
  const std::size_t out_stride = axis == 0 ? od.h * od.w : axis == 1 ? od.w : 1;
  const std::size_t lo_pad = target > n ? (target - n) / 2 : 0;
  std::vector<V> line(n), result(target);
  for (std::size_t z = 0; z < (axis == 0 ? 1 : d.d); ++z) {
    for (std::size_t y = 0; y < (axis == 1 ? 1 : d.h); ++y) {
      for (std::size_t x = 0; x < (axis == 2 ? 1 : d.w); ++x) {
        const std::size_t in_base = in.index(z, y, x);
        const std::size_t out_base = out.index(z, y, x);
        for (std::size_t i = 0; i < n; ++i) line[i] = in.voxels()[in_base + i * in_stride];
        if (target > n) {
          std::fill(result.begin(), result.end(), V(0));
          std::copy(line.begin(), line.end(), result.begin() + std::ptrdiff_t(lo_pad));
        } else {
          for (std::size_t i = 0; i < target; ++i) result[i] = resample(line, source_coordinate(i, n, target));
        }
        for (std::size_t i = 0; i < target; ++i) out.voxels()[out_base + i * out_stride] = result[i];
      }
    }
  }
  return out;
}

}  // namespace

Volume normalize_volume(const Volume& volume) {
  const auto& v = volume.voxels();
  double total = 0.0;
  for (float x : v) total += x;
  const double mu = total / double(v.size());
  double sq = 0.0;
  for (float x : v) sq += (x - mu) * (x - mu);
  const double sigma = std::sqrt(sq / double(v.size()));
  Volume out(volume.dims());
  if (sigma < 1e-8) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out.voxels()[i] = float((v[i] - mu) / sigma);
  return out;
}

Volume resize_pad(const Volume& volume, const Dims& target) {
  if (target.d == 0 || target.h == 0 || target.w == 0) {
    throw std::invalid_argument("resize_pad: target dimensions must be positive");
  }
  auto linear = [](const std::vector<float>& line, double c) {
    const std::size_t i0 = std::size_t(std::floor(c));
    const std::size_t i1 = std::min(i0 + 1, line.size() - 1);
    const double t = c - double(i0);
    return float((1.0 - t) * line[i0] + t * line[i1]);
  };
  Volume out = resize_axis(volume, 0, target.d, linear);
  out = resize_axis(out, 1, target.h, linear);
  return resize_axis(out, 2, target.w, linear);
}

MaskVolume resize_pad(const MaskVolume& mask, const Dims& target) {
  if (target.d == 0 || target.h == 0 || target.w == 0) {
    throw std::invalid_argument("resize_pad: target dimensions must be positive");
  }
  auto nearest = [](const std::vector<std::uint8_t>& line, double c) {
    return line[std::min(line.size() - 1, std::size_t(std::lround(c)))];
  };
  MaskVolume out = resize_axis(mask, 0, target.d, nearest);
  out = resize_axis(out, 1, target.h, nearest);
  return resize_axis(out, 2, target.w, nearest);
}

MaskVolume adaptive_threshold(const Volume& volume, std::size_t block, double offset) {
  if (block < 3 || block % 2 == 0) {
    throw std::invalid_argument("adaptive_threshold: block must be odd and >= 3, got " + std::to_string(block));
  }
  const std::size_t r = block / 2;
  Grid<double> sums(volume.dims(), std::vector<double>(volume.voxels().begin(), volume.voxels().end()));
  for (int axis = 0; axis < 3; ++axis) {
    sums = along_axis(sums, axis, [r](const auto& line, auto& out) { clamped_box_sum(line, out, r); });
  }
  const double cells = double(block) * double(block) * double(block);
  MaskVolume out(volume.dims());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.voxels()[i] = double(volume.voxels()[i]) > sums.voxels()[i] / cells + offset ? kMaskOn : 0;
  }
  return out;
}

MaskVolume erode(const MaskVolume& mask, std::size_t radius) { return morphology(mask, radius, true); }

MaskVolume dilate(const MaskVolume& mask, std::size_t radius) { return morphology(mask, radius, false); }

MaskVolume make_mask(const Volume& volume, const MaskConfig& config) {
  const auto [lo, hi] = std::minmax_element(volume.voxels().begin(), volume.voxels().end());
  for (float v : volume.voxels()) {
    if (!std::isfinite(v)) throw std::invalid_argument("make_mask: volume contains non-finite values");
  }
  Volume scaled(volume.dims());
  const double range = double(*hi) - double(*lo);
  if (range >= 1e-8) {
    for (std::size_t i = 0; i < scaled.size(); ++i) {
      scaled.voxels()[i] = float((double(volume.voxels()[i]) - *lo) / range * 255.0);
    }
  }
  MaskVolume mask = adaptive_threshold(scaled, config.block, config.offset);
  return dilate(erode(mask, config.radius), config.radius);
}

PatchGrid make_patch_grid(const Dims& dims, std::size_t per_axis) {
  if (per_axis == 0 || dims.d % per_axis || dims.h % per_axis || dims.w % per_axis) {
    throw std::invalid_argument("patch grid " + std::to_string(per_axis) + " does not divide volume " +
                                to_string(dims));
  }
  return PatchGrid{per_axis, dims, Dims{dims.d / per_axis, dims.h / per_axis, dims.w / per_axis}};
}

template <typename V>
std::vector<Grid<V>> split_patches(const Grid<V>& volume, std::size_t per_axis) {
  const PatchGrid grid = make_patch_grid(volume.dims(), per_axis);
  const Dims& p = grid.patch;
  std::vector<Grid<V>> patches;
  patches.reserve(grid.count());
  for (std::size_t i = 0; i < grid.count(); ++i) {
    const auto c = grid.cell(i);
    Grid<V> patch(p);
    for (std::size_t z = 0; z < p.d; ++z) {
      for (std::size_t y = 0; y < p.h; ++y) {
        const V* src = &volume.at(c.gz * p.d + z, c.gy * p.h + y, c.gx * p.w);
        std::copy(src, src + p.w, &patch.at(z, y, 0));
      }
    }
    patches.push_back(std::move(patch));
  }
  return patches;
}

template <typename V>
Grid<V> reassemble(std::span<const Grid<V>> patches, std::size_t per_axis) {
  if (patches.size() != per_axis * per_axis * per_axis || patches.empty()) {
    throw std::invalid_argument("reassemble: expected " + std::to_string(per_axis * per_axis * per_axis) +
                                " patches, got " + std::to_string(patches.size()));
  }
  const Dims p = patches.front().dims();
  for (const auto& patch : patches) {
    if (!(patch.dims() == p)) throw std::invalid_argument("reassemble: patches differ in size");
  }
  const PatchGrid grid{per_axis, Dims{p.d * per_axis, p.h * per_axis, p.w * per_axis}, p};
  Grid<V> out(grid.volume);
  for (std::size_t i = 0; i < grid.count(); ++i) {
    const auto c = grid.cell(i);
    for (std::size_t z = 0; z < p.d; ++z) {
      for (std::size_t y = 0; y < p.h; ++y) {
        const V* src = &patches[i].at(z, y, 0);
        std::copy(src, src + p.w, &out.at(c.gz * p.d + z, c.gy * p.h + y, c.gx * p.w));
      }
    }
  }
  return out;
}

template std::vector<Volume> split_patches(const Volume&, std::size_t);
template std::vector<MaskVolume> split_patches(const MaskVolume&, std::size_t);
template Volume reassemble(std::span<const Volume>, std::size_t);
template MaskVolume reassemble(std::span<const MaskVolume>, std::size_t);

std::uint8_t patch_indicator(const MaskVolume& patch, double min_fraction) {
  std::size_t on = 0;
  for (std::uint8_t v : patch.voxels()) on += v == kMaskOn;
  return double(on) > min_fraction * double(patch.size()) ? 1 : 0;
}

std::vector<std::uint8_t> structure_vector(const MaskVolume& mask, std::size_t per_axis, double min_fraction) {
  const auto patches = split_patches(mask, per_axis);
  std::vector<std::uint8_t> f;
  f.reserve(patches.size());
  for (const auto& patch : patches) f.push_back(patch_indicator(patch, min_fraction));
  return f;
}

}  // namespace sranet::volprep
