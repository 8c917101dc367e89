#include "sranet/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "sranet/ops.hpp"

namespace sranet::model {
namespace {

// Sum of the given terms in ascending order: identical for any permutation
// of the same multiset.
template <typename T>
T sorted_sum(std::vector<T>& terms) {
  std::sort(terms.begin(), terms.end());
  T acc = T(0);
  for (T t : terms) acc += t;
  return acc;
}

template <typename T>
Tensor<T> uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(double(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> values(numel(shape));
  for (auto& v : values) v = T(dist(rng));
  return Tensor<T>(std::move(shape), std::move(values));
}

}  // namespace

void ModelConfig::validate() const {
  if (per_axis == 0 || feature_dim == 0 || attention_dim == 0 || conv1_channels == 0 || conv2_channels == 0) {
    throw std::invalid_argument("model: P, M, L and channel counts must be positive");
  }
  if (input.d == 0 || input.h == 0 || input.w == 0) {
    throw std::invalid_argument("model: input dims must be positive, got " + to_string(input));
  }
  if (input.d % per_axis || input.h % per_axis || input.w % per_axis) {
    throw std::invalid_argument("model: P = " + std::to_string(per_axis) + " does not divide input " +
                                to_string(input));
  }
  const Dims p = patch();
  if (p.d % 4 || p.h % 4 || p.w % 4) {
    throw std::invalid_argument("model: patch " + to_string(p) + " must be divisible by 4 on every axis");
  }
  if (!(indicator_min_fraction >= 0.0 && indicator_min_fraction < 1.0)) {
    throw std::invalid_argument("model: indicator_min_fraction must lie in [0, 1)");
  }
}

std::size_t ModelConfig::flat_features() const {
  const Dims p = patch();
  return conv2_channels * (p.d / 4) * (p.h / 4) * (p.w / 4);
}

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t c1 = config.conv1_channels, c2 = config.conv2_channels;
  const std::size_t m = config.feature_dim, l = config.attention_dim, k3 = kKernel * kKernel * kKernel;
  const std::size_t flat = config.flat_features();
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.config = config;
  p.conv1_kernel = uniform<T>({c1, 1, kKernel, kKernel, kKernel}, k3, rng);
  p.conv1_bias = uniform<T>({c1}, k3, rng);
  p.conv2_kernel = uniform<T>({c2, c1, kKernel, kKernel, kKernel}, c1 * k3, rng);
  p.conv2_bias = uniform<T>({c2}, c1 * k3, rng);
  p.proj_weight = uniform<T>({m, flat}, flat, rng);
  p.proj_bias = uniform<T>({m}, flat, rng);
  p.att_k = uniform<T>({l, m}, m, rng);
  p.att_q = uniform<T>({l, m}, m, rng);
  p.att_w = uniform<T>({1, l}, l, rng);
  p.cls_weight = uniform<T>({1, m}, m, rng);
  p.cls_bias = uniform<T>({1}, m, rng);
  p.set_requires_grad(true);
  return p;
}

template <typename T>
std::vector<NamedTensor<T>> ModelParams<T>::named() const {
  return {
      {"conv1.kernel", conv1_kernel}, {"conv1.bias", conv1_bias},   {"conv2.kernel", conv2_kernel},
      {"conv2.bias", conv2_bias},     {"proj.weight", proj_weight}, {"proj.bias", proj_bias},
      {"attention.K", att_k},         {"attention.Q", att_q},       {"attention.w", att_w},
      {"head.weight", cls_weight},    {"head.bias", cls_bias},
  };
}

template <typename T>
void ModelParams<T>::set_requires_grad(bool on) {
  for (auto& nt : named()) nt.tensor.set_requires_grad(on);
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for (auto& nt : named()) nt.tensor.zero_grad();
}

template <typename T>
bool ModelParams<T>::all_finite() const {
  for (const auto& nt : named()) {
    for (T v : nt.tensor.data()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& nt : named()) n += nt.tensor.size();
  return n;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  auto convert = [](const Tensor<T>& t) {
    std::vector<U> values(t.data().begin(), t.data().end());
    return Tensor<U>(t.shape(), std::move(values), t.requires_grad());
  };
  ModelParams<U> out;
  out.config = config;
  out.conv1_kernel = convert(conv1_kernel);
  out.conv1_bias = convert(conv1_bias);
  out.conv2_kernel = convert(conv2_kernel);
  out.conv2_bias = convert(conv2_bias);
  out.proj_weight = convert(proj_weight);
  out.proj_bias = convert(proj_bias);
  out.att_k = convert(att_k);
  out.att_q = convert(att_q);
  out.att_w = convert(att_w);
  out.cls_weight = convert(cls_weight);
  out.cls_bias = convert(cls_bias);
  return out;
}

template <typename T>
Tensor<T> cnn_features(Tape<T>& tape, const Tensor<T>& patch, const ModelParams<T>& params) {
  if (patch.rank() != 4 || patch.dim(0) != 1) {
    throw ShapeError("cnn_features: expected a [1, d, h, w] patch, got " + to_string(patch.shape()));
  }
  for (std::size_t axis = 1; axis < 4; ++axis) {
    if (patch.dim(axis) % 4 != 0) {
      throw ShapeError("cnn_features: patch " + to_string(patch.shape()) + " is not divisible by 4");
    }
  }
  constexpr std::size_t pad = kKernel / 2;
  auto x = ops::conv3d(tape, patch, params.conv1_kernel, params.conv1_bias, pad);
  x = ops::maxpool3d(tape, ops::relu(tape, x), 2, 2);
  x = ops::conv3d(tape, x, params.conv2_kernel, params.conv2_bias, pad);
  x = ops::maxpool3d(tape, ops::relu(tape, x), 2, 2);
  x = ops::reshape(tape, x, Shape{x.size()});
  return ops::linear(tape, x, params.proj_weight, std::optional<Tensor<T>>(params.proj_bias));
}

template <typename T>
Tensor<T> gated_scores(Tape<T>& tape, std::span<const Tensor<T>> features, const ModelParams<T>& params) {
  if (features.empty()) throw ShapeError("gated_scores: empty bag");
  const std::size_t m = params.att_k.dim(1);
  std::vector<Tensor<T>> scores;
  scores.reserve(features.size());
  for (const auto& h : features) {
    if (h.rank() != 1 || h.dim(0) != m) {
      throw ShapeError("gated_scores: feature " + to_string(h.shape()) + " does not match attention [" +
                       std::to_string(params.att_k.dim(0)) + ", " + std::to_string(m) + "]");
    }
    // Row by row, so each score is computed identically wherever it sits in the bag.
    auto t = ops::tanh(tape, ops::linear(tape, h, params.att_k));
    auto s = ops::sigmoid(tape, ops::linear(tape, h, params.att_q));
    scores.push_back(ops::linear(tape, ops::mul(tape, t, s), params.att_w));
  }
  auto stacked = ops::stack<T>(tape, scores);
  return ops::reshape(tape, stacked, Shape{features.size()});
}

template <typename T>
Tensor<T> normalize_scores(Tape<T>& tape, const Tensor<T>& scores) {
  if (scores.rank() != 1 || scores.size() == 0) {
    throw ShapeError("normalize_scores: expected a non-empty vector, got " + to_string(scores.shape()));
  }
  const std::size_t n = scores.size();
  auto g = scores.data();
  const std::size_t argmin = std::size_t(std::min_element(g.begin(), g.end()) - g.begin());
  const T lowest = g[argmin];
  std::vector<T> shifted(n);
  for (std::size_t i = 0; i < n; ++i) shifted[i] = g[i] - lowest;
  std::vector<T> terms = shifted;
  const T denom = sorted_sum(terms);
  const bool degenerate = !(double(denom) >= 1e-8);

  Tensor<T> out(Shape{n});
  auto a = out.data();
  for (std::size_t i = 0; i < n; ++i) a[i] = degenerate ? T(1) / T(n) : shifted[i] / denom;

  tape.record({scores}, out, [scores, out, shifted, denom, degenerate, argmin, n]() mutable {
    if (degenerate) return;  // locally constant
    auto ga = out.grad();
    // d a_i / d s_j = delta_ij / S - s_i / S^2, and s_j = g_j - g_argmin.
    std::vector<T> terms(n);
    for (std::size_t i = 0; i < n; ++i) terms[i] = ga[i] * shifted[i];
    T dot = T(0);
    for (T t : terms) dot += t;
    auto gg = scores.grad_buffer();
    T total = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const T gs = ga[j] / denom - dot / (denom * denom);
      gg[j] += gs;
      total += gs;
    }
    gg[argmin] -= total;
  });
  if (tape.signature_enabled()) tape.mix_signature(argmin * 2 + (degenerate ? 1 : 0));
  return out;
}

template <typename T>
Tensor<T> aggregate(Tape<T>& tape, const Tensor<T>& rows, const Tensor<T>& weights) {
  if (rows.rank() != 2 || weights.rank() != 1 || rows.dim(0) != weights.dim(0)) {
    throw ShapeError("aggregate: rows " + to_string(rows.shape()) + " and weights " +
                     to_string(weights.shape()) + " do not pair up");
  }
  const std::size_t n = rows.dim(0), m = rows.dim(1);
  Tensor<T> out(Shape{m});
  auto h = rows.data();
  auto a = weights.data();
  std::vector<T> terms(n);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i) terms[i] = a[i] * h[i * m + j];
    out.data()[j] = sorted_sum(terms);
  }
  tape.record({rows, weights}, out, [rows, weights, out, n, m]() mutable {
    auto gz = out.grad();
    if (rows.requires_grad()) {
      auto gh = rows.grad_buffer();
      auto a = weights.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gh[i * m + j] += a[i] * gz[j];
    }
    if (weights.requires_grad()) {
      auto ga = weights.grad_buffer();
      auto h = rows.data();
      for (std::size_t i = 0; i < n; ++i) {
        T acc = T(0);
        for (std::size_t j = 0; j < m; ++j) acc += h[i * m + j] * gz[j];
        ga[i] += acc;
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> classify_logit(Tape<T>& tape, const Tensor<T>& z, const ModelParams<T>& params) {
  if (z.rank() != 1 || z.dim(0) != params.cls_weight.dim(1)) {
    throw ShapeError("classify: feature " + to_string(z.shape()) + " does not match head " +
                     to_string(params.cls_weight.shape()));
  }
  return ops::linear(tape, z, params.cls_weight, std::optional<Tensor<T>>(params.cls_bias));
}

template <typename T>
Tensor<T> classify(Tape<T>& tape, const Tensor<T>& z, const ModelParams<T>& params) {
  return ops::sigmoid(tape, classify_logit(tape, z, params));
}

template <typename T>
ForwardResult<T> forward(Tape<T>& tape, const Volume& volume, const MaskVolume& mask,
                         const ModelParams<T>& params, std::span<const std::size_t> order) {
  const ModelConfig& cfg = params.config;
  if (!(volume.dims() == mask.dims())) {
    throw std::invalid_argument("forward: volume " + to_string(volume.dims()) + " and mask " +
                                to_string(mask.dims()) + " differ in shape");
  }
  if (!(volume.dims() == cfg.input)) {
    throw std::invalid_argument("forward: volume " + to_string(volume.dims()) + " does not match model input " +
                                to_string(cfg.input));
  }
  const auto grid = volprep::make_patch_grid(volume.dims(), cfg.per_axis);
  const std::size_t n = grid.count();

  ForwardResult<T> result;
  if (order.empty()) {
    result.order.resize(n);
    std::iota(result.order.begin(), result.order.end(), std::size_t(0));
  } else {
    std::vector<std::size_t> check(order.begin(), order.end());
    std::sort(check.begin(), check.end());
    for (std::size_t i = 0; i < check.size(); ++i) {
      if (check[i] != i || check.size() != n) {
        throw std::invalid_argument("forward: patch order is not a permutation of 0.." + std::to_string(n - 1));
      }
    }
    result.order.assign(order.begin(), order.end());
  }

  const auto patches = volprep::split_patches(volume, cfg.per_axis);
  const auto indicators = volprep::structure_vector(mask, cfg.per_axis, cfg.indicator_min_fraction);
  const Dims pd = grid.patch;

  std::vector<Tensor<T>> features;
  features.reserve(n);
  for (std::size_t pos = 0; pos < n; ++pos) {
    const auto& src = patches[result.order[pos]].voxels();
    Tensor<T> patch(Shape{1, pd.d, pd.h, pd.w}, std::vector<T>(src.begin(), src.end()));
    features.push_back(cnn_features(tape, patch, params));
    result.indicators.push_back(indicators[result.order[pos]]);
  }
  result.scores = gated_scores<T>(tape, features, params);
  result.weights = normalize_scores(tape, result.scores);
  auto rows = ops::reshape(tape, ops::stack<T>(tape, features), Shape{n, cfg.feature_dim});
  result.z = aggregate(tape, rows, result.weights);
  result.p = classify(tape, result.z, params);

  AttentionMap& map = result.attention;
  map.g.assign(n, 0.0);
  map.a.assign(n, 0.0);
  map.f.assign(indicators.begin(), indicators.end());
  for (std::size_t i = 0; i < n; ++i) map.coords.push_back(grid.cell(i));
  for (std::size_t pos = 0; pos < n; ++pos) {
    map.g[result.order[pos]] = double(result.scores.data()[pos]);
    map.a[result.order[pos]] = double(result.weights.data()[pos]);
  }
  return result;
}

#define SRANET_INSTANTIATE(T)                                                                          \
  template struct ModelParams<T>;                                                                      \
  template Tensor<T> cnn_features(Tape<T>&, const Tensor<T>&, const ModelParams<T>&);                  \
  template Tensor<T> gated_scores(Tape<T>&, std::span<const Tensor<T>>, const ModelParams<T>&);        \
  template Tensor<T> normalize_scores(Tape<T>&, const Tensor<T>&);                                     \
  template Tensor<T> aggregate(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> classify_logit(Tape<T>&, const Tensor<T>&, const ModelParams<T>&);                \
  template Tensor<T> classify(Tape<T>&, const Tensor<T>&, const ModelParams<T>&);                      \
  template ForwardResult<T> forward(Tape<T>&, const Volume&, const MaskVolume&, const ModelParams<T>&, \
                                    std::span<const std::size_t>);

SRANET_INSTANTIATE(float)
SRANET_INSTANTIATE(double)
#undef SRANET_INSTANTIATE

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

}  // namespace sranet::model
