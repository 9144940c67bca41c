// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0

#include "hybridbert/attention.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "hybridbert/errors.hpp"

namespace hybridbert {

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double stddev) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

template <typename T>
Tensor<T> eye(std::size_t d) {
  Tensor<T> t({d, d});
  for (std::size_t i = 0; i < d; ++i) t.data()[i * d + i] = T(1);
  return t;
}

template <typename T>
Tensor<T> as_batched(const Tensor<T>& x) {
  if (x.rank() == 3) return x;
  if (x.rank() == 2) return reshape(x, {1, x.dim(0), x.dim(1)});
  throw ShapeError("attention: expected [l x d] or [B x l x d], got " + shape_str(x.shape()));
}

template <typename T>
Tensor<T> restore_rank(const Tensor<T>& y, std::size_t rank) {
  return rank == 3 ? y : reshape(y, {y.dim(1), y.dim(2)});
}

void check_mask(const char* what, std::span<const std::uint8_t> mask, std::size_t expected) {
  if (!mask.empty() && mask.size() != expected) {
    throw ShapeError(std::string(what) + " has " + std::to_string(mask.size()) + " entries, expected " +
                     std::to_string(expected));
  }
}

bool any_set(std::span<const std::uint8_t> m) {
  return std::any_of(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; });
}

// Shared self-attention path. `excluded` keys get the additive sentinel
// before softmax; `dropped` keys (literal mode) are zeroed after it.
template <typename T>
Tensor<T> self_attention_core(const Tensor<T>& x, const AttentionWeights<T>& w,
                              std::span<const std::uint8_t> excluded, std::span<const std::uint8_t> dropped,
                              AttentionStats* stats) {
  w.validate();
  const Tensor<T> x3 = as_batched(x);
  const std::size_t B = x3.dim(0), l = x3.dim(1), d = x3.dim(2);
  if (d != w.width()) throw ShapeError("attention: input " + shape_str(x.shape()) + " vs weights " + shape_str(w.query_w.shape()));
  const std::size_t heads = w.heads;
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(d / heads));

  auto qh = split_heads(linear(x3, w.query_w, w.query_b), heads);
  auto kh = split_heads(linear(x3, w.key_w, w.key_b), heads);
  auto vh = split_heads(linear(x3, w.value_w, w.value_b), heads);
  auto scores = bmm(qh, kh, /*transpose_b=*/true, inv_scale);
  SoftmaxStats sm;
  auto probs = any_set(excluded) ? softmax_lastdim(scores, key_mask<T>(B, l, excluded), &sm)
                                 : softmax_lastdim(scores);
  if (any_set(dropped)) {
    Tensor<T> keep({B, 1, 1, l});
    for (std::size_t i = 0; i < dropped.size(); ++i) keep.data()[i] = dropped[i] ? T(0) : T(1);
    probs = mul_constant(probs, keep);
  }
  if (stats) stats->degenerate_rows += sm.degenerate_rows / heads;
  auto context = merge_heads(bmm(probs, vh));
  return restore_rank(linear(context, w.output_w, w.output_b), x.rank());
}

}  // namespace

template <typename T>
void AttentionWeights<T>::validate() const {
  const std::size_t d = query_w.dim(0);
  for (const auto* m : {&query_w, &key_w, &value_w, &output_w}) {
    if (m->rank() != 2 || m->dim(0) != d || m->dim(1) != d) {
      throw ShapeError("attention weights must be square [d x d], got " + shape_str(m->shape()));
    }
  }
  for (const auto* b : {&query_b, &key_b, &value_b, &output_b}) {
    if (b->rank() != 1 || b->dim(0) != d) throw ShapeError("attention bias must be [d], got " + shape_str(b->shape()));
  }
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("hidden width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
}

template <typename T>
AttentionWeights<T> AttentionWeights<T>::random(std::size_t d, std::size_t heads, Rng& rng, double stddev) {
  AttentionWeights w;
  w.query_w = random_tensor<T>({d, d}, rng, stddev);
  w.query_b = random_tensor<T>({d}, rng, stddev);
  w.key_w = random_tensor<T>({d, d}, rng, stddev);
  w.key_b = random_tensor<T>({d}, rng, stddev);
  w.value_w = random_tensor<T>({d, d}, rng, stddev);
  w.value_b = random_tensor<T>({d}, rng, stddev);
  w.output_w = random_tensor<T>({d, d}, rng, stddev);
  w.output_b = random_tensor<T>({d}, rng, stddev);
  w.heads = heads;
  return w;
}

template <typename T>
AttentionWeights<T> AttentionWeights<T>::identity(std::size_t d, std::size_t heads) {
  AttentionWeights w;
  w.query_w = eye<T>(d);
  w.key_w = eye<T>(d);
  w.value_w = eye<T>(d);
  w.output_w = eye<T>(d);
  w.query_b = Tensor<T>({d});
  w.key_b = Tensor<T>({d});
  w.value_b = Tensor<T>({d});
  w.output_b = Tensor<T>({d});
  w.heads = heads;
  return w;
}

template <typename T>
Tensor<T> key_mask(std::size_t batch, std::size_t len, std::span<const std::uint8_t> excluded) {
  check_mask("key mask", excluded, batch * len);
  Tensor<T> m({batch, 1, 1, len});
  auto mv = m.data();
  for (std::size_t i = 0; i < excluded.size(); ++i) mv[i] = excluded[i] ? dtype_traits<T>::mask_value : T(0);
  return m;
}

template <typename T>
Tensor<T> multi_head_self_attention(const Tensor<T>& x, const AttentionWeights<T>& w,
                                    std::span<const std::uint8_t> padding_mask, AttentionStats* stats) {
  const std::size_t rows = x.numel() / x.shape().back();
  check_mask("padding mask", padding_mask, rows);
  return self_attention_core(x, w, padding_mask, {}, stats);
}

template <typename T>
Tensor<T> dropmask_self_attention(const Tensor<T>& x, const AttentionWeights<T>& w,
                                  std::span<const std::uint8_t> padding_mask,
                                  std::span<const std::uint8_t> mask_positions, const DropMaskConfig& cfg,
                                  AttentionStats* stats) {
  const std::size_t rows = x.numel() / x.shape().back();
  check_mask("padding mask", padding_mask, rows);
  check_mask("mask positions", mask_positions, rows);
  if (!cfg.enabled || !any_set(mask_positions)) return self_attention_core(x, w, padding_mask, {}, stats);
  if (cfg.renormalize) {
    Mask excluded(mask_positions.begin(), mask_positions.end());
    for (std::size_t i = 0; i < padding_mask.size(); ++i) excluded[i] |= padding_mask[i];
    return self_attention_core(x, w, excluded, {}, stats);
  }
  return self_attention_core(x, w, padding_mask, mask_positions, stats);
}

template <typename T>
Tensor<T> single_query_cross_attention(const Tensor<T>& q, const Tensor<T>& keys, const Tensor<T>& values,
                                       std::span<const std::uint8_t> padding_mask, std::size_t heads) {
  const Tensor<T> k3 = as_batched(keys);
  const Tensor<T> v3 = as_batched(values);
  if (k3.shape() != v3.shape()) throw ShapeError("cross attention: keys " + shape_str(keys.shape()) + " vs values " + shape_str(values.shape()));
  const std::size_t B = k3.dim(0), l = k3.dim(1), d = k3.dim(2);
  const bool flat_query = q.rank() == 1;
  if ((flat_query && (B != 1 || q.dim(0) != d)) || (!flat_query && (q.rank() != 2 || q.dim(0) != B || q.dim(1) != d))) {
    throw ShapeError("cross attention: query " + shape_str(q.shape()) + " vs keys " + shape_str(keys.shape()));
  }
  if (heads == 0 || d % heads != 0) throw ShapeError("cross attention: width not divisible by heads");
  check_mask("padding mask", padding_mask, B * l);
  for (std::size_t b = 0; b < B && !padding_mask.empty(); ++b) {
    if (std::all_of(padding_mask.begin() + b * l, padding_mask.begin() + (b + 1) * l, [](std::uint8_t v) { return v != 0; })) {
      throw std::invalid_argument("cross attention: every key is padded");
    }
  }
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(d / heads));
  auto qh = split_heads(reshape(q, {B, 1, d}), heads);
  auto scores = bmm(qh, split_heads(k3, heads), /*transpose_b=*/true, inv_scale);
  auto probs = any_set(padding_mask) ? softmax_lastdim(scores, key_mask<T>(B, l, padding_mask)) : softmax_lastdim(scores);
  auto context = merge_heads(bmm(probs, split_heads(v3, heads)));
  return flat_query ? reshape(context, {d}) : reshape(context, {B, d});
}

#define HYBRIDBERT_INSTANTIATE(T)                                                                      \
  template struct AttentionWeights<T>;                                                                 \
  template Tensor<T> key_mask<T>(std::size_t, std::size_t, std::span<const std::uint8_t>);             \
  template Tensor<T> multi_head_self_attention(const Tensor<T>&, const AttentionWeights<T>&,           \
                                               std::span<const std::uint8_t>, AttentionStats*);        \
  template Tensor<T> dropmask_self_attention(const Tensor<T>&, const AttentionWeights<T>&,             \
                                             std::span<const std::uint8_t>, std::span<const std::uint8_t>, \
                                             const DropMaskConfig&, AttentionStats*);                  \
  template Tensor<T> single_query_cross_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                                  std::span<const std::uint8_t>, std::size_t);

HYBRIDBERT_INSTANTIATE(float)
HYBRIDBERT_INSTANTIATE(double)

#undef HYBRIDBERT_INSTANTIATE

}  // namespace hybridbert
