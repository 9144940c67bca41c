// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0

#include "hybridbert/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "hybridbert/errors.hpp"

namespace hybridbert {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor rank must be at least 1");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

template <typename T>
thread_local Tape<T>* g_active_tape = nullptr;

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<detail::Node<T>>()) {
  check_shape(shape);
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<detail::Node<T>>()) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not hold " + std::to_string(values.size()) +
                     " values");
  }
  node_->shape = std::move(shape);
  node_->data.assign(values.begin(), values.end());
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  if (!is_leaf()) throw std::logic_error("requires_grad can only be set on leaf tensors");
  node_->requires_grad = flag;
  return *this;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  Tensor<T> out(node_->shape);
  out.node_->data = node_->data;
  return out;
}

template <typename T>
Tensor<T> Tape<T>::record(std::string_view op, Tensor<T> out, const std::vector<Tensor<T>>& inputs,
                          BackwardFn<T> fn) {
  if (consumed_) throw std::logic_error("tape already replayed; reset() before recording");
  auto node = out.node();
  node->requires_grad = true;
  node->producer = this;
  Entry entry{op, node, {}, std::move(fn)};
  entry.inputs.reserve(inputs.size());
  for (const auto& in : inputs) entry.inputs.push_back(in.node());
  entries_.push_back(std::move(entry));
  return out;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) {
    throw std::logic_error("backward called twice on the same tape; reset() and zero_grad() first");
  }
  if (loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (loss.node()->producer != this) {
    throw std::logic_error("loss was not recorded on this tape");
  }
  for (const auto& e : entries_) {
    for (const auto& in : e.inputs) {
      if (in->producer == nullptr && in->requires_grad && !in->grad.empty()) {
        throw std::logic_error(
            "leaf tensor already holds a gradient; call zero_grad() before the next backward");
      }
    }
  }
  consumed_ = true;
  loss.node()->grad.assign(1, T(1));

  BackwardContext<T> ctx;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    auto& out = *it->output;
    if (out.grad.empty()) continue;
    ctx.out_value = out.data;
    ctx.out_grad = out.grad;
    ctx.input_grads.assign(it->inputs.size(), {});
    for (std::size_t i = 0; i < it->inputs.size(); ++i) {
      auto& in = *it->inputs[i];
      if (!in.requires_grad) continue;
      if (in.grad.empty()) in.grad.assign(in.data.size(), T(0));
      ctx.input_grads[i] = in.grad;
    }
    it->fn(ctx);
  }
}

template <typename T>
void Tape<T>::reset() {
  entries_.clear();
  consumed_ = false;
}

template <typename T>
std::size_t Tape<T>::recorded_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.output->data.size();
  return n;
}

template <typename T>
std::size_t Tape<T>::largest_recorded() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n = std::max(n, e.output->data.size());
  return n;
}

template <typename T>
std::vector<std::string_view> Tape<T>::op_names() const {
  std::vector<std::string_view> names;
  names.reserve(entries_.size());
  for (const auto& e : entries_) names.push_back(e.op);
  return names;
}

template <typename T>
Tape<T>* active_tape() noexcept {
  return g_active_tape<T>;
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(g_active_tape<T>) {
  g_active_tape<T> = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  g_active_tape<T> = previous_;
}

template <typename T>
NoGradScope<T>::NoGradScope() : previous_(g_active_tape<T>) {
  g_active_tape<T> = nullptr;
}

template <typename T>
NoGradScope<T>::~NoGradScope() {
  g_active_tape<T> = previous_;
}

template <typename T>
Tensor<T> record_op(std::string_view op, Tensor<T> out, const std::vector<Tensor<T>>& inputs,
                    BackwardFn<T> fn) {
  Tape<T>* tape = g_active_tape<T>;
  if (tape == nullptr) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor<T>& t) { return t.requires_grad(); });
  if (!any) return out;
  return tape->record(op, std::move(out), inputs, std::move(fn));
}

template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>* tape = g_active_tape<T>;
  if (tape == nullptr) throw std::logic_error("backward without an active tape");
  tape->backward(loss);
}

#define HYBRIDBERT_INSTANTIATE(T)                                                          \
  template class Tensor<T>;                                                                \
  template class Tape<T>;                                                                  \
  template class TapeScope<T>;                                                             \
  template class NoGradScope<T>;                                                           \
  template Tape<T>* active_tape<T>() noexcept;                                             \
  template Tensor<T> record_op<T>(std::string_view, Tensor<T>, const std::vector<Tensor<T>>&, \
                                  BackwardFn<T>);                                          \
  template void backward<T>(const Tensor<T>&);

HYBRIDBERT_INSTANTIATE(float)
HYBRIDBERT_INSTANTIATE(double)

#undef HYBRIDBERT_INSTANTIATE

}  // namespace hybridbert
