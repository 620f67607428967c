#pragma once

// Dense row-major tensors with an optional gradient buffer, and the tape
// that records differentiable operations for reverse-mode evaluation.

#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace olva {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <std::floating_point T>
class BasicTape;

/// Reference-semantics handle: copies alias the same storage, like a
/// framework tensor. Use clone() for a deep copy.
template <std::floating_point T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<T> data();
  std::span<const T> data() const;
  T item() const;
  T& at(std::size_t flat) { return data()[flat]; }
  T at(std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  /// Enabling allocates a zeroed gradient buffer; disabling drops it.
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<T> grad();
  std::span<const T> grad() const;
  void zero_grad();

  /// Deep copy of the values; the copy is a leaf without gradient.
  BasicTensor clone() const;
  /// Same values, no gradient tracking, fresh storage.
  BasicTensor detach() const { return clone(); }

  /// Identity of the underlying storage.
  const void* id() const { return impl_.get(); }

  template <std::floating_point U>
  BasicTensor<U> cast() const {
    std::vector<U> out(numel());
    auto src = data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
    return BasicTensor<U>::from(shape(), std::move(out));
  }

 private:
  struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  explicit BasicTensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  Impl& impl() const;

  std::shared_ptr<Impl> impl_;
};

/// Ordered record of executed operations. Each entry's backward rule reads
/// the output gradient and accumulates into the inputs' gradients.
template <std::floating_point T>
class BasicTape {
 public:
  using Rule = std::function<void()>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  void record(std::vector<BasicTensor<T>> inputs, BasicTensor<T> output, Rule rule);

  /// Seeds d(loss)/d(loss) = 1 and runs every rule once in reverse order.
  /// Intermediate gradients are reset first; leaf gradients accumulate
  /// across calls.
  void backward(const BasicTensor<T>& loss);

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  /// Tape that ops on this thread currently record to (nullptr: inference).
  static BasicTape* active();

 private:
  template <std::floating_point>
  friend class TapeGuard;

  struct Node {
    std::vector<BasicTensor<T>> inputs;
    BasicTensor<T> output;
    Rule rule;
  };
  std::vector<Node> nodes_;
};

/// Makes a tape active on the current thread for the guard's lifetime.
template <std::floating_point T>
class TapeGuard {
 public:
  explicit TapeGuard(BasicTape<T>& tape);
  ~TapeGuard();
  TapeGuard(const TapeGuard&) = delete;
  TapeGuard& operator=(const TapeGuard&) = delete;

 private:
  BasicTape<T>* previous_;
};

/// Runs backward on the active tape.
template <std::floating_point T>
void backward(const BasicTensor<T>& loss);

using Tensor = BasicTensor<float>;
using Tape = BasicTape<float>;

}  // namespace olva
