#pragma once

// Direct 3D correlation kernels on channels-last buffers. Output channels are
// processed in lanes of 8 (one SIMD register for float under AVX2), and
// several neighbouring output voxels are accumulated at once so the FMA
// chains are independent.

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <vector>

namespace sranet::ops::detail {

inline constexpr std::size_t kLanes = 8;
inline constexpr std::size_t kBlock = 8;

inline std::size_t round_up(std::size_t n) { return (n + kLanes - 1) / kLanes * kLanes; }

struct Extent3 {
  std::size_t d, h, w;
  std::size_t count() const { return d * h * w; }
};

// dst[z][y][x][c] = src[c][z - offset][y - offset][x - offset], zero outside src.
// `offset` may be negative (cropping).
template <typename T>
void to_channels_last(const T* src, std::size_t channels, Extent3 s, Extent3 p, std::ptrdiff_t offset, T* dst) {
  std::fill(dst, dst + p.count() * channels, T(0));
  const std::ptrdiff_t first = std::max<std::ptrdiff_t>(0, offset);
  const std::ptrdiff_t z0 = first, z1 = std::min<std::ptrdiff_t>(std::ptrdiff_t(p.d), std::ptrdiff_t(s.d) + offset);
  const std::ptrdiff_t y0 = first, y1 = std::min<std::ptrdiff_t>(std::ptrdiff_t(p.h), std::ptrdiff_t(s.h) + offset);
  const std::ptrdiff_t x0 = first, x1 = std::min<std::ptrdiff_t>(std::ptrdiff_t(p.w), std::ptrdiff_t(s.w) + offset);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::ptrdiff_t z = z0; z < z1; ++z)
      for (std::ptrdiff_t y = y0; y < y1; ++y) {
        const T* row = src + ((c * s.d + std::size_t(z - offset)) * s.h + std::size_t(y - offset)) * s.w;
        T* out = dst + (std::size_t(z) * p.h + std::size_t(y)) * p.w * channels + c;
        for (std::ptrdiff_t x = x0; x < x1; ++x) out[std::size_t(x) * channels] = row[x - offset];
      }
}

// kt[((kz*k + ky)*k + kx)*cin + ci][co] (rows padded to round_up(cout)) from
// kernel[co][ci][kz][ky][kx]. With `flip`, the roles of the channel axes swap
// and the taps are mirrored: the adjoint correlation.
template <typename T>
std::vector<T> pack_kernel(const T* kernel, std::size_t cout, std::size_t cin, std::size_t k, bool flip) {
  const std::size_t in_ch = flip ? cout : cin, out_ch = flip ? cin : cout;
  const std::size_t stride = round_up(out_ch);
  std::vector<T> kt(k * k * k * in_ch * stride, T(0));
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t kz = 0; kz < k; ++kz)
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const T v = kernel[(((co * cin + ci) * k + kz) * k + ky) * k + kx];
            if (!flip) {
              kt[(((kz * k + ky) * k + kx) * cin + ci) * stride + co] = v;
            } else {
              const std::size_t uz = k - 1 - kz, uy = k - 1 - ky, ux = k - 1 - kx;
              kt[(((uz * k + uy) * k + ux) * cout + co) * stride + ci] = v;
            }
          }
  return kt;
}

// CIN > 0 fixes the channel count at compile time so the R input offsets
// become immediates; CIN == 0 reads it from `cin`.
template <typename T, std::size_t R, std::size_t CIN>
inline void correlate_block(const T* xp, std::size_t cin_rt, Extent3 p, const T* kt, std::size_t k,
                            std::size_t stride, std::size_t lane, std::size_t oz, std::size_t oy,
                            std::size_t ox, T* y) {
  using V = Eigen::Array<T, kLanes, 1>;
  const std::size_t cin = CIN ? CIN : cin_rt;
  V acc[R];
  for (std::size_t r = 0; r < R; ++r) acc[r].setZero();
  const std::size_t span = k * cin;  // kx and ci are contiguous in both buffers
  for (std::size_t kz = 0; kz < k; ++kz)
    for (std::size_t ky = 0; ky < k; ++ky) {
      const T* xrow = xp + (((oz + kz) * p.h + oy + ky) * p.w + ox) * cin;
      const T* krow = kt + (kz * k + ky) * span * stride + lane;
      for (std::size_t j = 0; j < span; ++j) {
        const V kv = Eigen::Map<const V>(krow + j * stride);
        for (std::size_t r = 0; r < R; ++r) acc[r] += xrow[j + r * cin] * kv;
      }
    }
  for (std::size_t r = 0; r < R; ++r) Eigen::Map<V>(y + r * stride + lane) = acc[r];
}

template <typename T, std::size_t CIN>
void correlate_impl(const T* xp, std::size_t cin, Extent3 p, const T* kt, std::size_t k, std::size_t cout, T* y) {
  const std::size_t stride = round_up(cout);
  const Extent3 o{p.d - k + 1, p.h - k + 1, p.w - k + 1};
  for (std::size_t lane = 0; lane < stride; lane += kLanes)
    for (std::size_t oz = 0; oz < o.d; ++oz)
      for (std::size_t oy = 0; oy < o.h; ++oy) {
        T* yrow = y + (oz * o.h + oy) * o.w * stride;
        std::size_t ox = 0;
        for (; ox + kBlock <= o.w; ox += kBlock)
          correlate_block<T, kBlock, CIN>(xp, cin, p, kt, k, stride, lane, oz, oy, ox, yrow + ox * stride);
        for (; ox < o.w; ++ox)
          correlate_block<T, 1, CIN>(xp, cin, p, kt, k, stride, lane, oz, oy, ox, yrow + ox * stride);
      }
}

// y[oz][oy][ox][co] = sum over taps and ci of xp[oz+kz][oy+ky][ox+kx][ci] * kt[tap][ci][co].
// xp has extent p, y has extent (p - k + 1) and row stride round_up(cout).
template <typename T>
void correlate(const T* xp, std::size_t cin, Extent3 p, const T* kt, std::size_t k, std::size_t cout, T* y) {
  switch (cin) {
    case 1: return correlate_impl<T, 1>(xp, cin, p, kt, k, cout, y);
    case 2: return correlate_impl<T, 2>(xp, cin, p, kt, k, cout, y);
    case 4: return correlate_impl<T, 4>(xp, cin, p, kt, k, cout, y);
    case 8: return correlate_impl<T, 8>(xp, cin, p, kt, k, cout, y);
    case 16: return correlate_impl<T, 16>(xp, cin, p, kt, k, cout, y);
    default: return correlate_impl<T, 0>(xp, cin, p, kt, k, cout, y);
  }
}

// R taps at once; S interleaved partial sums over output voxels keep the
// FMA chains independent when R is small.
template <typename T, std::size_t R, std::size_t S>
inline void kernel_grad_block(const T* xp, std::size_t cin, Extent3 p, const T* gy, std::size_t stride,
                              std::size_t lane, Extent3 o, std::size_t kz, std::size_t ky, std::size_t j0,
                              T* gkt_row) {
  using V = Eigen::Array<T, kLanes, 1>;
  V acc[S][R];
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t r = 0; r < R; ++r) acc[s][r].setZero();
  for (std::size_t oz = 0; oz < o.d; ++oz)
    for (std::size_t oy = 0; oy < o.h; ++oy) {
      const T* xrow = xp + (((oz + kz) * p.h + oy + ky) * p.w) * cin + j0;
      const T* grow = gy + (oz * o.h + oy) * o.w * stride + lane;
      std::size_t ox = 0;
      for (; ox + S <= o.w; ox += S) {
        for (std::size_t s = 0; s < S; ++s) {
          const V g = Eigen::Map<const V>(grow + (ox + s) * stride);
          const T* xv = xrow + (ox + s) * cin;
          for (std::size_t r = 0; r < R; ++r) acc[s][r] += xv[r] * g;
        }
      }
      for (; ox < o.w; ++ox) {
        const V g = Eigen::Map<const V>(grow + ox * stride);
        const T* xv = xrow + ox * cin;
        for (std::size_t r = 0; r < R; ++r) acc[0][r] += xv[r] * g;
      }
    }
  for (std::size_t s = 1; s < S; ++s)
    for (std::size_t r = 0; r < R; ++r) acc[0][r] += acc[s][r];
  for (std::size_t r = 0; r < R; ++r) Eigen::Map<V>(gkt_row + r * stride + lane) = acc[0][r];
}

// gkt[tap][ci][co] = sum over output voxels of xp[voxel + tap][ci] * gy[voxel][co].
template <typename T>
void kernel_grad(const T* xp, std::size_t cin, Extent3 p, const T* gy, std::size_t cout, std::size_t k, T* gkt) {
  const std::size_t stride = round_up(cout);
  const Extent3 o{p.d - k + 1, p.h - k + 1, p.w - k + 1};
  const std::size_t span = k * cin;
  for (std::size_t lane = 0; lane < stride; lane += kLanes)
    for (std::size_t kz = 0; kz < k; ++kz)
      for (std::size_t ky = 0; ky < k; ++ky) {
        T* base = gkt + (kz * k + ky) * span * stride;
        std::size_t j = 0;
        for (; j + kBlock <= span; j += kBlock)
          kernel_grad_block<T, kBlock, 1>(xp, cin, p, gy, stride, lane, o, kz, ky, j, base + j * stride);
        T* tail = base + j * stride;
        switch (span - j) {
          case 0: break;
          case 1: kernel_grad_block<T, 1, 8>(xp, cin, p, gy, stride, lane, o, kz, ky, j, tail); break;
          case 2: kernel_grad_block<T, 2, 4>(xp, cin, p, gy, stride, lane, o, kz, ky, j, tail); break;
          case 3: kernel_grad_block<T, 3, 3>(xp, cin, p, gy, stride, lane, o, kz, ky, j, tail); break;
          case 4: kernel_grad_block<T, 4, 2>(xp, cin, p, gy, stride, lane, o, kz, ky, j, tail); break;
          case 5: kernel_grad_block<T, 5, 2>(xp, cin, p, gy, stride, lane, o, kz, ky, j, tail); break;
          case 6: kernel_grad_block<T, 6, 2>(xp, cin, p, gy, stride, lane, o, kz, ky, j, tail); break;
          default: kernel_grad_block<T, 7, 1>(xp, cin, p, gy, stride, lane, o, kz, ky, j, tail); break;
        }
      }
}

}  // namespace sranet::ops::detail
