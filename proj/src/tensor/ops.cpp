#include "sranet/ops.hpp"

#include <Eigen/Core>

#include "conv_kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <string>

namespace sranet {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

}  // namespace sranet

namespace sranet::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "sigmoid") return Activation::kSigmoid;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

template <typename T>
Tensor<T> conv3d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, std::size_t padding) {
  if (input.rank() != 4 || kernel.rank() != 5) {
    throw ShapeError("conv3d: expected input [C_in, D, H, W] and kernel [C_out, C_in, k, k, k], got " +
                     to_string(input.shape()) + " and " + to_string(kernel.shape()));
  }
  const Shape& ks = kernel.shape();
  if (ks[1] != input.dim(0)) {
    throw ShapeError("conv3d: kernel " + to_string(ks) + " expects " + std::to_string(ks[1]) +
                     " input channels, input " + to_string(input.shape()) + " has " +
                     std::to_string(input.dim(0)));
  }
  if (ks[2] != ks[3] || ks[2] != ks[4] || ks[2] % 2 == 0) {
    throw ShapeError("conv3d: kernel must be cubic with odd size, got " + to_string(ks));
  }
  if (bias.rank() != 1 || bias.dim(0) != ks[0]) {
    throw ShapeError("conv3d: bias " + to_string(bias.shape()) + " does not match " +
                     std::to_string(ks[0]) + " output channels");
  }
  const std::size_t cin = input.dim(0), cout = ks[0], k = ks[2];
  const detail::Extent3 in{input.dim(1), input.dim(2), input.dim(3)};
  for (std::size_t extent : {in.d, in.h, in.w}) {
    if (extent + 2 * padding < k) {
      throw ShapeError("conv3d: spatial extent " + to_string(input.shape()) + " with padding " +
                       std::to_string(padding) + " is smaller than kernel size " + std::to_string(k));
    }
  }
  const detail::Extent3 padded{in.d + 2 * padding, in.h + 2 * padding, in.w + 2 * padding};
  const detail::Extent3 o{padded.d - k + 1, padded.h - k + 1, padded.w - k + 1};
  const std::size_t stride = detail::round_up(cout), npos = o.count();

  Tensor<T> out(Shape{cout, o.d, o.h, o.w});
  {
    std::vector<T> xp(padded.count() * cin);
    detail::to_channels_last(input.data().data(), cin, in, padded, std::ptrdiff_t(padding), xp.data());
    const auto kt = detail::pack_kernel(kernel.data().data(), cout, cin, k, false);
    std::vector<T> y(npos * stride);
    detail::correlate(xp.data(), cin, padded, kt.data(), k, cout, y.data());
    T* dst = out.data().data();
    for (std::size_t co = 0; co < cout; ++co) {
      const T b = bias.data()[co];
      for (std::size_t pos = 0; pos < npos; ++pos) dst[co * npos + pos] = y[pos * stride + co] + b;
    }
  }

  tape.record({input, kernel, bias}, out, [input, kernel, bias, out, cin, cout, k, in, padded, o, padding]() mutable {
    const std::size_t stride = detail::round_up(cout), npos = o.count();
    const T* gy = out.grad().data();
    if (bias.requires_grad()) {
      auto gb = bias.grad_buffer();
      for (std::size_t co = 0; co < cout; ++co) {
        T acc = T(0);
        for (std::size_t pos = 0; pos < npos; ++pos) acc += gy[co * npos + pos];
        gb[co] += acc;
      }
    }
    if (kernel.requires_grad()) {
      std::vector<T> xp(padded.count() * cin);
      detail::to_channels_last(input.data().data(), cin, in, padded, std::ptrdiff_t(padding), xp.data());
      std::vector<T> gy_cl(npos * stride, T(0));
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t pos = 0; pos < npos; ++pos) gy_cl[pos * stride + co] = gy[co * npos + pos];
      std::vector<T> gkt(k * k * k * cin * stride);
      detail::kernel_grad(xp.data(), cin, padded, gy_cl.data(), cout, k, gkt.data());
      auto gk = kernel.grad_buffer();
      const std::size_t taps = k * k * k;
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t tap = 0; tap < taps; ++tap) gk[(co * cin + ci) * taps + tap] += gkt[(tap * cin + ci) * stride + co];
    }
    if (input.requires_grad()) {
      // Adjoint: correlate the output gradient with the mirrored, channel-swapped kernel.
      const detail::Extent3 gp{in.d + k - 1, in.h + k - 1, in.w + k - 1};
      std::vector<T> gyp(gp.count() * cout);
      detail::to_channels_last(gy, cout, o, gp, std::ptrdiff_t(k - 1) - std::ptrdiff_t(padding), gyp.data());
      const auto kt = detail::pack_kernel(kernel.data().data(), cout, cin, k, true);
      const std::size_t in_stride = detail::round_up(cin);
      std::vector<T> gx_cl(in.count() * in_stride);
      detail::correlate(gyp.data(), cout, gp, kt.data(), k, cin, gx_cl.data());
      auto gx = input.grad_buffer();
      const std::size_t n_in = in.count();
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t pos = 0; pos < n_in; ++pos) gx[ci * n_in + pos] += gx_cl[pos * in_stride + ci];
    }
  });
  return out;
}

template <typename T>
Tensor<T> maxpool3d(Tape<T>& tape, const Tensor<T>& input, std::size_t window, std::size_t stride) {
  if (input.rank() != 4) {
    throw ShapeError("maxpool3d: expected [C, D, H, W], got " + to_string(input.shape()));
  }
  if (window == 0 || stride == 0) {
    throw ShapeError("maxpool3d: window and stride must be positive");
  }
  const std::size_t c = input.dim(0), d = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (d < window || h < window || w < window) {
    throw ShapeError("maxpool3d: window " + std::to_string(window) + " exceeds spatial extent of " +
                     to_string(input.shape()));
  }
  const std::size_t od = (d - window) / stride + 1;
  const std::size_t oh = (h - window) / stride + 1;
  const std::size_t ow = (w - window) / stride + 1;
  Tensor<T> out(Shape{c, od, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  const T* x = input.data().data();
  T* y = out.data().data();
  std::size_t o = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t z = 0; z < od; ++z) {
      for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t q = 0; q < ow; ++q, ++o) {
          std::size_t best = ((ch * d + z * stride) * h + r * stride) * w + q * stride;
          for (std::size_t dz = 0; dz < window; ++dz) {
            for (std::size_t dy = 0; dy < window; ++dy) {
              const std::size_t base = ((ch * d + z * stride + dz) * h + r * stride + dy) * w + q * stride;
              for (std::size_t dx = 0; dx < window; ++dx) {
                if (x[base + dx] > x[best]) best = base + dx;
              }
            }
          }
          argmax[o] = best;
          y[o] = x[best];
        }
      }
    }
  }
  if (tape.signature_enabled()) {
    std::uint64_t hsh = 0;
    for (std::size_t idx : argmax) hsh = mix64(hsh ^ idx);
    tape.mix_signature(hsh);
  }
  tape.record({input}, out, [input, out, argmax = std::move(argmax)]() mutable {
    auto gx = input.grad_buffer();
    auto gy = out.grad();
    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += gy[i];
  });
  return out;
}

template <typename T>
Tensor<T> elementwise(Tape<T>& tape, const Tensor<T>& input, Activation fn) {
  Tensor<T> out(input.shape());
  auto x = input.data();
  auto y = out.data();
  switch (fn) {
    case Activation::kRelu:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      if (tape.signature_enabled()) {
        std::uint64_t hsh = 0, word = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
          word = (word << 1) | (x[i] > T(0) ? 1u : 0u);
          if (i % 64 == 63) {
            hsh = mix64(hsh ^ word);
            word = 0;
          }
        }
        tape.mix_signature(mix64(hsh ^ word));
      }
      break;
    case Activation::kTanh:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid_scalar(x[i]);
      break;
  }
  tape.record({input}, out, [input, out, fn]() mutable {
    auto gx = input.grad_buffer();
    auto gy = out.grad();
    auto x = input.data();
    auto y = out.data();
    switch (fn) {
      case Activation::kRelu:
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += x[i] > T(0) ? gy[i] : T(0);
        break;
      case Activation::kTanh:
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * (T(1) - y[i] * y[i]);
        break;
      case Activation::kSigmoid:
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * y[i] * (T(1) - y[i]);
        break;
    }
  });
  return out;
}

template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const std::optional<Tensor<T>>& bias) {
  if (weight.rank() != 2) {
    throw ShapeError("linear: weight must be [L, M], got " + to_string(weight.shape()));
  }
  if (input.rank() != 1 && input.rank() != 2) {
    throw ShapeError("linear: input must be [M] or [N, M], got " + to_string(input.shape()));
  }
  const std::size_t out_dim = weight.dim(0), in_dim = weight.dim(1);
  const std::size_t batch = input.rank() == 1 ? 1 : input.dim(0);
  const std::size_t features = input.shape().back();
  if (features != in_dim) {
    throw ShapeError("linear: weight " + to_string(weight.shape()) + " expects " +
                     std::to_string(in_dim) + " input features, input " + to_string(input.shape()) +
                     " has " + std::to_string(features));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != out_dim)) {
    throw ShapeError("linear: bias " + to_string(bias->shape()) + " does not match weight " +
                     to_string(weight.shape()));
  }
  Tensor<T> out(input.rank() == 1 ? Shape{out_dim} : Shape{batch, out_dim});
  ConstMatMap<T> x(input.data().data(), Eigen::Index(batch), Eigen::Index(in_dim));
  ConstMatMap<T> wm(weight.data().data(), Eigen::Index(out_dim), Eigen::Index(in_dim));
  MatMap<T> y(out.data().data(), Eigen::Index(batch), Eigen::Index(out_dim));
  y.noalias() = x * wm.transpose();
  if (bias) {
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t l = 0; l < out_dim; ++l) y(Eigen::Index(n), Eigen::Index(l)) += bias->data()[l];
    }
  }

  std::vector<Tensor<T>> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  Tensor<T> b = bias ? *bias : Tensor<T>();
  tape.record(std::move(inputs), out, [input, weight, b, out, batch, in_dim, out_dim]() mutable {
    ConstMatMap<T> gy(out.grad().data(), Eigen::Index(batch), Eigen::Index(out_dim));
    if (input.requires_grad()) {
      ConstMatMap<T> wm(weight.data().data(), Eigen::Index(out_dim), Eigen::Index(in_dim));
      MatMap<T> gx(input.grad_buffer().data(), Eigen::Index(batch), Eigen::Index(in_dim));
      gx.noalias() += gy * wm;
    }
    if (weight.requires_grad()) {
      ConstMatMap<T> x(input.data().data(), Eigen::Index(batch), Eigen::Index(in_dim));
      MatMap<T> gw(weight.grad_buffer().data(), Eigen::Index(out_dim), Eigen::Index(in_dim));
      gw.noalias() += gy.transpose() * x;
    }
    if (b.defined() && b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t l = 0; l < out_dim; ++l) gb[l] += gy(Eigen::Index(n), Eigen::Index(l));
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  tape.record({a, b}, out, [a, b, out]() mutable {
    auto gy = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  tape.record({a, b}, out, [a, b, out]() mutable {
    auto gy = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * b.data()[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * a.data()[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * factor;
  tape.record({a}, out, [a, out, factor]() mutable {
    auto ga = a.grad_buffer();
    auto gy = out.grad();
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * factor;
  });
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  Tensor<T> out = Tensor<T>::scalar(total);
  tape.record({a}, out, [a, out]() mutable {
    auto ga = a.grad_buffer();
    const T g = out.grad()[0];
    for (auto& v : ga) v += g;
  });
  return out;
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(tape, sum(tape, a), T(1) / T(a.size()));
}

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  Tensor<T> out(std::move(shape), a.values());
  tape.record({a}, out, [a, out]() mutable {
    auto ga = a.grad_buffer();
    auto gy = out.grad();
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
  });
  return out;
}

template <typename T>
Tensor<T> stack(Tape<T>& tape, std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("stack: no tensors given");
  const Shape& inner = parts.front().shape();
  for (const auto& p : parts) {
    if (p.shape() != inner) {
      throw ShapeError("stack: shape mismatch " + to_string(inner) + " vs " + to_string(p.shape()));
    }
  }
  Shape shape{parts.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  Tensor<T> out(std::move(shape));
  const std::size_t chunk = parts.front().size();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::copy(parts[i].data().begin(), parts[i].data().end(), out.data().begin() + std::ptrdiff_t(i * chunk));
  }
  std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
  tape.record(inputs, out, [inputs, out, chunk]() mutable {
    auto gy = out.grad();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!inputs[i].requires_grad()) continue;
      auto gx = inputs[i].grad_buffer();
      for (std::size_t j = 0; j < chunk; ++j) gx[j] += gy[i * chunk + j];
    }
  });
  return out;
}

template <typename T>
Tensor<T> matvec(Tape<T>& tape, const Tensor<T>& rows, const Tensor<T>& v) {
  if (rows.rank() != 2 || v.rank() != 1 || rows.dim(1) != v.dim(0)) {
    throw ShapeError("matvec: cannot multiply " + to_string(rows.shape()) + " by " + to_string(v.shape()));
  }
  const std::size_t n = rows.dim(0), m = rows.dim(1);
  Tensor<T> out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    T acc = T(0);
    for (std::size_t j = 0; j < m; ++j) acc += rows.data()[i * m + j] * v.data()[j];
    out.data()[i] = acc;
  }
  tape.record({rows, v}, out, [rows, v, out, n, m]() mutable {
    auto gy = out.grad();
    if (rows.requires_grad()) {
      auto gr = rows.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) gr[i * m + j] += gy[i] * v.data()[j];
      }
    }
    if (v.requires_grad()) {
      auto gv = v.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) gv[j] += gy[i] * rows.data()[i * m + j];
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> weighted_sum(Tape<T>& tape, const Tensor<T>& weights, const Tensor<T>& rows) {
  if (weights.rank() != 1 || rows.rank() != 2 || weights.dim(0) != rows.dim(0)) {
    throw ShapeError("weighted_sum: weights " + to_string(weights.shape()) + " do not match rows " +
                     to_string(rows.shape()));
  }
  const std::size_t n = rows.dim(0), m = rows.dim(1);
  Tensor<T> out(Shape{m});
  for (std::size_t i = 0; i < n; ++i) {
    const T a = weights.data()[i];
    for (std::size_t j = 0; j < m; ++j) out.data()[j] += a * rows.data()[i * m + j];
  }
  tape.record({weights, rows}, out, [weights, rows, out, n, m]() mutable {
    auto gy = out.grad();
    if (weights.requires_grad()) {
      auto gw = weights.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        T acc = T(0);
        for (std::size_t j = 0; j < m; ++j) acc += gy[j] * rows.data()[i * m + j];
        gw[i] += acc;
      }
    }
    if (rows.requires_grad()) {
      auto gr = rows.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) gr[i * m + j] += weights.data()[i] * gy[j];
      }
    }
  });
  return out;
}

#define SRANET_INSTANTIATE_OPS(T)                                                                     \
  template Tensor<T> conv3d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                            std::size_t);                                                             \
  template Tensor<T> maxpool3d(Tape<T>&, const Tensor<T>&, std::size_t, std::size_t);                 \
  template Tensor<T> elementwise(Tape<T>&, const Tensor<T>&, Activation);                             \
  template Tensor<T> linear(Tape<T>&, const Tensor<T>&, const Tensor<T>&,                             \
                            const std::optional<Tensor<T>>&);                                         \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                            \
  template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> mean(Tape<T>&, const Tensor<T>&);                                                \
  template Tensor<T> reshape(Tape<T>&, const Tensor<T>&, Shape);                                      \
  template Tensor<T> stack(Tape<T>&, std::span<const Tensor<T>>);                                     \
  template Tensor<T> matvec(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> weighted_sum(Tape<T>&, const Tensor<T>&, const Tensor<T>&);

SRANET_INSTANTIATE_OPS(float)
SRANET_INSTANTIATE_OPS(double)

#undef SRANET_INSTANTIATE_OPS

}  // namespace sranet::ops
