#include "sranet/adamw.hpp"

#include <cmath>

namespace sranet {

template <typename T>
void adamw_step(std::span<NamedTensor<T>> params, AdamWState<T>& state, const AdamWHyper& hyper) {
  if (!(hyper.lr > 0.0)) throw std::invalid_argument("adamw: learning rate must be positive");
  if (state.first_moment.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.tensor.size(), T(0));
      state.second_moment.emplace_back(p.tensor.size(), T(0));
    }
  }
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ShapeError("adamw: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params[i].tensor;
    if (state.first_moment[i].size() != t.size() || state.second_moment[i].size() != t.size()) {
      throw ShapeError("adamw: moment buffers do not match parameter '" + params[i].name + "'");
    }
    for (T g : t.grad()) {
      if (!std::isfinite(g)) throw NonFiniteGradient(params[i].name);
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(hyper.beta1, t);
  const double bias2 = 1.0 - std::pow(hyper.beta2, t);
  const T decay = T(1.0 - hyper.lr * hyper.weight_decay);
  const T b1 = T(hyper.beta1), b2 = T(hyper.beta2);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& tensor = params[i].tensor;
    auto w = tensor.data();
    auto g = tensor.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const T grad = g.empty() ? T(0) : g[j];
      m[j] = b1 * m[j] + (T(1) - b1) * grad;
      v[j] = b2 * v[j] + (T(1) - b2) * grad * grad;
      const double m_hat = double(m[j]) / bias1;
      const double v_hat = double(v[j]) / bias2;
      w[j] *= decay;
      w[j] -= T(hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps));
    }
  }
}

template void adamw_step(std::span<NamedTensor<float>>, AdamWState<float>&, const AdamWHyper&);
template void adamw_step(std::span<NamedTensor<double>>, AdamWState<double>&, const AdamWHyper&);

}  // namespace sranet
