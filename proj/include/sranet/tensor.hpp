#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sranet {

using Shape = std::vector<std::size_t>;

/// Raised whenever an operation receives operands whose shapes do not fit.
/// Shape checks always run before any arithmetic.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array with an optional gradient buffer.
///
/// A Tensor is a handle: copies share storage, the way autodiff graphs need
/// them to. Use clone() for an independent deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  /// Zero-filled tensor.
  explicit Tensor(Shape shape) : storage_(std::make_shared<Storage>()) {
    storage_->data.assign(numel(shape), T(0));
    storage_->shape = std::move(shape);
  }

  static Tensor zeros(Shape shape, bool requires_grad) {
    Tensor t(std::move(shape));
    t.set_requires_grad(requires_grad);
    return t;
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : storage_(std::make_shared<Storage>()) {
    if (data.size() != numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + to_string(shape));
    }
    storage_->shape = std::move(shape);
    storage_->data = std::move(data);
    storage_->requires_grad = requires_grad;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(storage_); }

  const Shape& shape() const { return storage_->shape; }
  std::size_t rank() const { return storage_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return storage_->shape.at(axis); }
  std::size_t size() const { return storage_->data.size(); }

  std::span<T> data() { return storage_->data; }
  std::span<const T> data() const { return storage_->data; }
  const std::vector<T>& values() const { return storage_->data; }

  T item() const {
    if (size() != 1) {
      throw ShapeError("item() needs a single-element tensor, got shape " + to_string(shape()));
    }
    return storage_->data.front();
  }

  bool requires_grad() const { return storage_->requires_grad; }
  void set_requires_grad(bool flag) { storage_->requires_grad = flag; }

  /// True for tensors not produced by a recorded operation.
  bool is_leaf() const { return storage_->leaf; }

  bool has_grad() const { return !storage_->grad.empty(); }
  std::span<const T> grad() const { return storage_->grad; }

  /// Gradient buffer, allocated (zero-filled) on first access. Callable on
  /// const handles: gradients accumulate into shared storage.
  std::span<T> grad_buffer() const {
    if (storage_->grad.empty()) storage_->grad.assign(storage_->data.size(), T(0));
    return storage_->grad;
  }

  void zero_grad() {
    storage_->grad.clear();
    storage_->grad.shrink_to_fit();
  }

  Tensor clone() const {
    Tensor copy(shape(), storage_->data, requires_grad());
    return copy;
  }

  bool shares_storage(const Tensor& other) const { return storage_ == other.storage_; }

  // Internal: marks the tensor as an operation output.
  void mark_non_leaf() const { storage_->leaf = false; }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    bool leaf = true;
  };
  std::shared_ptr<Storage> storage_;
};

/// Ordered record of executed differentiable operations.
///
/// Operations append one entry each; backward() replays the adjoints in
/// reverse execution order. A tape supports exactly one backward pass, and
/// refuses to run if any leaf it touches already carries a gradient (call
/// zero_grad() on parameters between steps).
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records an operation if any input requires a gradient. Marks `output`
  /// accordingly and returns whether the entry was recorded.
  bool record(std::vector<Tensor<T>> inputs, Tensor<T>& output, BackwardFn backward_fn) {
    output.mark_non_leaf();
    bool needs_grad = false;
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
    needs_grad = needs_grad && recording_;
    output.set_requires_grad(needs_grad);
    if (!needs_grad) return false;
    entries_.push_back(Entry{std::move(inputs), output, std::move(backward_fn)});
    return true;
  }

  void backward(Tensor<T> loss) {
    if (loss.size() != 1) {
      throw ShapeError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
    }
    if (consumed_) {
      throw std::logic_error("backward() already ran on this tape");
    }
    if (!loss.requires_grad()) {
      throw std::logic_error("loss does not depend on any tensor that requires a gradient");
    }
    for (const auto& entry : entries_) {
      for (const auto& in : entry.inputs) {
        if (in.is_leaf() && in.requires_grad() && in.has_grad()) {
          throw std::logic_error(
              "a leaf tensor already holds a gradient; zero_grad() before a second backward");
        }
      }
    }
    consumed_ = true;
    for (auto& entry : entries_) {
      for (auto in : entry.inputs) {
        if (in.is_leaf() && in.requires_grad()) in.grad_buffer();
      }
    }
    loss.grad_buffer()[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->output.has_grad()) continue;  // not reachable from the loss
      it->backward();
      ++replayed_;
    }
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t replayed() const { return replayed_; }
  bool consumed() const { return consumed_; }

  /// When disabled, operations still compute outputs but nothing is recorded.
  void set_recording(bool flag) { recording_ = flag; }
  bool recording() const { return recording_; }

  // Discrete-decision fingerprint (relu activity, pooling argmax, ...). Used by
  // finite-difference checks to detect when a perturbation crosses a kink.
  void enable_signature(bool flag) { signature_enabled_ = flag; }
  bool signature_enabled() const { return signature_enabled_; }
  void mix_signature(std::uint64_t value) {
    signature_ ^= value + 0x9e3779b97f4a7c15ULL + (signature_ << 6) + (signature_ >> 2);
  }
  std::uint64_t signature() const { return signature_; }

 private:
  struct Entry {
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
  bool recording_ = true;
  std::size_t replayed_ = 0;
  bool signature_enabled_ = false;
  std::uint64_t signature_ = 0;
};

}  // namespace sranet
