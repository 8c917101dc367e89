#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sranet/tensor.hpp"

// Differentiable kernels. Every function validates shapes before touching
// data and records its adjoint on the tape when any input needs a gradient.
namespace sranet::ops {

enum class Activation { kRelu, kTanh, kSigmoid };

Activation parse_activation(std::string_view name);

/// 3D cross-correlation over a single sample.
/// input [C_in, D, H, W], kernel [C_out, C_in, k, k, k], bias [C_out]
/// -> [C_out, D + 2p - k + 1, H + 2p - k + 1, W + 2p - k + 1]
template <typename T>
Tensor<T> conv3d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, std::size_t padding);

/// Max pooling over the three trailing axes of [C, D, H, W]. The gradient
/// flows to the first maximal element of each window.
template <typename T>
Tensor<T> maxpool3d(Tape<T>& tape, const Tensor<T>& input, std::size_t window, std::size_t stride);

template <typename T>
Tensor<T> elementwise(Tape<T>& tape, const Tensor<T>& input, Activation fn);

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& input) {
  return elementwise(tape, input, Activation::kRelu);
}
template <typename T>
Tensor<T> tanh(Tape<T>& tape, const Tensor<T>& input) {
  return elementwise(tape, input, Activation::kTanh);
}
template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& input) {
  return elementwise(tape, input, Activation::kSigmoid);
}

/// y = W x + b for x of shape [M], or row-wise for x of shape [N, M].
template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const std::optional<Tensor<T>>& bias = std::nullopt);

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a);

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& a);

/// Same data, new shape with an equal element count.
template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& a, Shape shape);

/// Stacks equally shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(Tape<T>& tape, std::span<const Tensor<T>> parts);

/// Row-wise matrix-vector product: rows [N, M], v [M] -> [N].
template <typename T>
Tensor<T> matvec(Tape<T>& tape, const Tensor<T>& rows, const Tensor<T>& v);

/// Weighted sum of rows: weights [N], rows [N, M] -> [M].
template <typename T>
Tensor<T> weighted_sum(Tape<T>& tape, const Tensor<T>& weights, const Tensor<T>& rows);

}  // namespace sranet::ops
