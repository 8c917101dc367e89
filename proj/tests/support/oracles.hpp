#pragma once

// Brute-force reference implementations used only by tests. They share no
// code with the library kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "sranet/tensor.hpp"

namespace oracle {

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

// out[co][z][y][x] = b[co] + sum_{ci,kz,ky,kx} in[ci][z+kz-p][y+ky-p][x+kx-p] * k[co][ci][kz][ky][kx]
inline std::vector<double> conv3d(const std::vector<double>& in, std::size_t cin, std::size_t d, std::size_t h,
                                  std::size_t w, const std::vector<double>& k, std::size_t cout, std::size_t ks,
                                  const std::vector<double>& b, std::size_t pad) {
  const std::size_t od = d + 2 * pad - ks + 1, oh = h + 2 * pad - ks + 1, ow = w + 2 * pad - ks + 1;
  std::vector<double> out(cout * od * oh * ow, 0.0);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = b[co];
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t kz = 0; kz < ks; ++kz)
              for (std::size_t ky = 0; ky < ks; ++ky)
                for (std::size_t kx = 0; kx < ks; ++kx) {
                  const long iz = long(z + kz) - long(pad), iy = long(y + ky) - long(pad),
                             ix = long(x + kx) - long(pad);
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= long(d) || iy >= long(h) || ix >= long(w)) continue;
                  acc += in[((ci * d + std::size_t(iz)) * h + std::size_t(iy)) * w + std::size_t(ix)] *
                         k[(((co * cin + ci) * ks + kz) * ks + ky) * ks + kx];
                }
          out[((co * od + z) * oh + y) * ow + x] = acc;
        }
  return out;
}

inline std::vector<double> maxpool3d(const std::vector<double>& in, std::size_t c, std::size_t d, std::size_t h,
                                     std::size_t w, std::size_t win, std::size_t stride) {
  const std::size_t od = (d - win) / stride + 1, oh = (h - win) / stride + 1, ow = (w - win) / stride + 1;
  std::vector<double> out;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double best = -INFINITY;
          for (std::size_t a = 0; a < win; ++a)
            for (std::size_t bb = 0; bb < win; ++bb)
              for (std::size_t e = 0; e < win; ++e)
                best = std::max(best, in[((ch * d + z * stride + a) * h + y * stride + bb) * w + x * stride + e]);
          out.push_back(best);
        }
  return out;
}

inline std::vector<double> linear(const std::vector<double>& x, const std::vector<double>& wt, std::size_t l,
                                  std::size_t m, const std::vector<double>& b) {
  std::vector<double> y(l);
  for (std::size_t i = 0; i < l; ++i) {
    double acc = b.empty() ? 0.0 : b[i];
    for (std::size_t j = 0; j < m; ++j) acc += wt[i * m + j] * x[j];
    y[i] = acc;
  }
  return y;
}

// tanh from its exponential definition, evaluated in long double.
inline double tanh_reference(double x) {
  const long double e2 = std::exp(2.0L * (long double)x);
  return double((e2 - 1.0L) / (e2 + 1.0L));
}

// P(score_pos > score_neg) + 0.5 P(equal), by enumerating every pair.
inline double mann_whitney_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

inline double bce(double prob, double target) {
  return -(target * std::log(prob) + (1.0 - target) * std::log(1.0 - prob));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Central-difference gradient check over the given leaf tensors.
///
/// `build` records a scalar loss on the supplied tape. Entries whose +-h
/// evaluation changes the tape's discrete signature (a relu or pooling
/// decision flips) are skipped: the finite difference is meaningless across
/// a kink. Returns the largest relative error among checked entries.
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

// Magnitudes below 1e-7 are compared on a 1e-7 scale; central differences
// carry ~1e-13 of round-off at step 1e-3.
inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-7});
  return std::abs(analytic - numeric) / scale;
}

inline GradCheckResult gradcheck(
    std::vector<sranet::Tensor<double>> leaves,
    const std::function<sranet::Tensor<double>(sranet::Tape<double>&)>& build, double step = 1e-3,
    std::size_t max_entries_per_leaf = SIZE_MAX, std::uint64_t seed = 7) {
  using sranet::Tape;
  for (auto& t : leaves) t.zero_grad();
  std::uint64_t base_signature = 0;
  {
    Tape<double> tape;
    tape.enable_signature(true);
    auto loss = build(tape);
    base_signature = tape.signature();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& t : leaves) analytic.emplace_back(t.grad().begin(), t.grad().end());
  for (auto& t : leaves) t.zero_grad();

  auto evaluate = [&](std::uint64_t& signature) {
    Tape<double> tape;
    tape.set_recording(false);
    tape.enable_signature(true);
    const double value = build(tape).item();
    signature = tape.signature();
    return value;
  };

  GradCheckResult result;
  std::mt19937_64 rng(seed);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto data = leaves[li].data();
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t done = 0;
    for (std::size_t idx : order) {
      if (done >= max_entries_per_leaf) break;
      const double saved = data[idx];
      std::uint64_t sp = 0, sm = 0;
      data[idx] = saved + step;
      const double fp = evaluate(sp);
      data[idx] = saved - step;
      const double fm = evaluate(sm);
      data[idx] = saved;
      if (sp != base_signature || sm != base_signature) {
        ++result.skipped;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * step);
      result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[li][idx], numeric));
      ++result.checked;
      ++done;
    }
  }
  return result;
}

}  // namespace oracle
