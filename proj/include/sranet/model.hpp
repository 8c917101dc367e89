#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sranet/adamw.hpp"
#include "sranet/tensor.hpp"
#include "sranet/volprep.hpp"
#include "sranet/volume.hpp"

// Patch-bag classifier: a small 3D CNN embeds every patch, gated attention
// scores the embeddings, min-shift normalization turns scores into weights,
// and a logistic head classifies the weighted sum.
namespace sranet::model {

inline constexpr std::size_t kKernel = 5;

struct ModelConfig {
  Dims input{128, 128, 128};
  std::size_t per_axis = 4;          // P
  std::size_t feature_dim = 256;     // M
  std::size_t attention_dim = 128;   // L
  std::size_t conv1_channels = 16;
  std::size_t conv2_channels = 32;
  double indicator_min_fraction = 0.0;

  /// Throws std::invalid_argument on inconsistent settings (P must divide
  /// the input and every patch extent must be divisible by 4).
  void validate() const;
  Dims patch() const { return Dims{input.d / per_axis, input.h / per_axis, input.w / per_axis}; }
  std::size_t flat_features() const;
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  Tensor<T> conv1_kernel, conv1_bias;  // [c1, 1, 5, 5, 5], [c1]
  Tensor<T> conv2_kernel, conv2_bias;  // [c2, c1, 5, 5, 5], [c2]
  Tensor<T> proj_weight, proj_bias;    // [M, c2 * d/4 * h/4 * w/4], [M]
  Tensor<T> att_k, att_q;              // [L, M]
  Tensor<T> att_w;                     // [1, L]
  Tensor<T> cls_weight, cls_bias;      // [1, M], [1]

  /// Uniform in +-1/sqrt(fan_in), drawn in declaration order from `seed`.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  /// Stable order and names; used by the optimizer and checkpoints.
  std::vector<NamedTensor<T>> named() const;

  void set_requires_grad(bool on);
  void zero_grad();
  bool all_finite() const;
  std::size_t parameter_count() const;

  /// Deep copy in another precision.
  template <typename U>
  ModelParams<U> cast() const;
};

/// Per-patch embedding h in R^M. `patch` is [1, d, h, w].
template <typename T>
Tensor<T> cnn_features(Tape<T>& tape, const Tensor<T>& patch, const ModelParams<T>& params);

/// g_i = w . (tanh(K h_i) * sigmoid(Q h_i)) for each h_i in R^M -> [n].
template <typename T>
Tensor<T> gated_scores(Tape<T>& tape, std::span<const Tensor<T>> features, const ModelParams<T>& params);

/// a_i = (g_i - min g) / sum_j (g_j - min g); uniform 1/n when the
/// denominator is below 1e-8. Sums are taken in sorted order so the result
/// does not depend on the order of the bag.
template <typename T>
Tensor<T> normalize_scores(Tape<T>& tape, const Tensor<T>& scores);

/// Z = sum_i a_i h_i for rows [n, M] and weights [n]; summed per feature in
/// sorted order, like normalize_scores.
template <typename T>
Tensor<T> aggregate(Tape<T>& tape, const Tensor<T>& rows, const Tensor<T>& weights);

/// Logit u.Z + b, shape [1].
template <typename T>
Tensor<T> classify_logit(Tape<T>& tape, const Tensor<T>& z, const ModelParams<T>& params);

/// p = sigmoid(u.Z + b), shape [1].
template <typename T>
Tensor<T> classify(Tape<T>& tape, const Tensor<T>& z, const ModelParams<T>& params);

struct AttentionMap {
  std::vector<double> g;
  std::vector<double> a;
  std::vector<std::uint8_t> f;
  std::vector<volprep::PatchGrid::Cell> coords;

  std::size_t size() const { return a.size(); }
};

template <typename T>
struct ForwardResult {
  Tensor<T> p;       // [1]
  Tensor<T> scores;  // g, bag order
  Tensor<T> weights; // a, bag order
  Tensor<T> z;       // [M]
  std::vector<std::uint8_t> indicators;  // f, bag order
  std::vector<std::size_t> order;        // bag position -> canonical patch index
  AttentionMap attention;                // canonical order

  double probability() const { return double(p.item()); }
};

/// Full pass over one (normalized) volume and its mask. The bag is built in
/// canonical patch order unless `order` supplies a permutation of patch
/// indices (a test hook for permutation invariance).
template <typename T>
ForwardResult<T> forward(Tape<T>& tape, const Volume& volume, const MaskVolume& mask,
                         const ModelParams<T>& params, std::span<const std::size_t> order = {});

}  // namespace sranet::model
