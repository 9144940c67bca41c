// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with a per-thread reverse-mode tape.
//
// A Tensor is a cheap handle onto a shared node holding the shape, the values
// and (once populated) the gradient. Operations record themselves on the
// thread's active Tape when one is installed through TapeScope and at least
// one input requires a gradient; otherwise they just compute values.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hybridbert {

using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
struct dtype_traits;
template <>
struct dtype_traits<float> {
  static constexpr DType dtype = DType::f32;
  static constexpr const char* name = "f32";
  /// Additive stand-in for -inf in attention masks.
  static constexpr float mask_value = -1e9f;
};
template <>
struct dtype_traits<double> {
  static constexpr DType dtype = DType::f64;
  static constexpr const char* name = "f64";
  static constexpr double mask_value = -1e18;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tape;

/// 64-byte aligned storage. Vectorised kernels peel a prefix that depends on
/// the start address; fixing the alignment keeps results bitwise reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using Storage = std::vector<T, AlignedAllocator<T>>;

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  Storage<T> data;
  Storage<T> grad;  // empty until populated by backward
  bool requires_grad = false;
  const Tape<T>* producer = nullptr;  // null for leaves
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  T item() const;

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  /// Only valid on leaves.
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const noexcept { return node_->producer == nullptr; }

  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad; }
  /// Drops the gradient buffer. Required before a leaf takes part in another backward pass.
  void zero_grad() { node_->grad.clear(); }

  /// Deep copy of the values, detached from any tape.
  Tensor detach() const;

  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

/// What a recorded op's backward closure sees. `input_grads[i]` is empty when
/// input i does not require a gradient; otherwise it is the accumulation buffer.
template <typename T>
struct BackwardContext {
  std::span<const T> out_value;
  std::span<const T> out_grad;
  std::vector<std::span<T>> input_grads;
};

template <typename T>
using BackwardFn = std::function<void(const BackwardContext<T>&)>;

template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor<T> record(std::string_view op, Tensor<T> out, const std::vector<Tensor<T>>& inputs,
                   BackwardFn<T> fn);

  /// Populates gradients of every requires_grad tensor reachable from `loss`.
  /// A tape can be replayed once; call reset() before recording the next pass.
  /// Throws if `loss` is not a single element, was not recorded here, or a leaf
  /// still holds a gradient from an earlier pass.
  void backward(const Tensor<T>& loss);

  void reset();

  std::size_t size() const noexcept { return entries_.size(); }
  bool consumed() const noexcept { return consumed_; }
  /// Sum of output element counts over every recorded op.
  std::size_t recorded_elements() const;
  /// Largest single recorded output.
  std::size_t largest_recorded() const;
  std::vector<std::string_view> op_names() const;

 private:
  struct Entry {
    std::string_view op;
    std::shared_ptr<detail::Node<T>> output;
    std::vector<std::shared_ptr<detail::Node<T>>> inputs;
    BackwardFn<T> fn;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

template <typename T>
Tape<T>* active_tape() noexcept;

/// Installs a tape as the thread's active tape for the scope's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Suspends recording for the scope's lifetime (evaluation passes).
template <typename T>
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Records `out` as produced from `inputs` on the active tape, when there is
/// one and any input requires a gradient. Otherwise returns `out` unchanged.
template <typename T>
Tensor<T> record_op(std::string_view op, Tensor<T> out, const std::vector<Tensor<T>>& inputs,
                    BackwardFn<T> fn);

/// Runs backward on the tape that recorded `loss`, which must be active.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace hybridbert
