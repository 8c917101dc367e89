#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sranet/tensor.hpp"

namespace sranet {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

struct AdamWHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Per-parameter first/second moment buffers plus the shared step counter.
template <typename T>
struct AdamWState {
  std::int64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& param)
      : std::runtime_error("non-finite gradient in parameter '" + param + "'"), param_(param) {}
  const std::string& param() const { return param_; }

 private:
  std::string param_;
};

/// One AdamW update with decoupled weight decay:
///   w <- w * (1 - lr * wd)
///   w <- w - lr * m_hat / (sqrt(v_hat) + eps)
/// A parameter without a populated gradient is updated as if its gradient were zero.
/// All gradients are checked for finiteness before any weight changes.
template <typename T>
void adamw_step(std::span<NamedTensor<T>> params, AdamWState<T>& state, const AdamWHyper& hyper);

}  // namespace sranet
