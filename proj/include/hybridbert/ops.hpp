// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. Every op is defined for float and double
// and records itself through record_op().

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hybridbert/random.hpp"
#include "hybridbert/tensor.hpp"

namespace hybridbert {

/// Per-position flags, 1 = set. Used for padding and [MASK] positions.
using Mask = std::vector<std::uint8_t>;

inline constexpr std::int32_t kIgnoreLabel = -100;

/// [m x k] * [k x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// [m x k] * [n x k]^T, used by the tied MLM decoder.
template <typename T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b);

/// x[... x k] * w[k x n] + bias[n], leading dims flattened.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

/// x[... x k] * w[n x k]^T + bias[n].
template <typename T>
Tensor<T> linear_bt(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

/// x[B x l x d] with each row of batch b multiplied elementwise by v[b].
template <typename T>
Tensor<T> mul_broadcast_rows(const Tensor<T>& x, const Tensor<T>& v);

/// Elementwise product with a constant broadcastable to x. No gradient flows
/// into `constant`.
template <typename T>
Tensor<T> mul_constant(const Tensor<T>& x, const Tensor<T>& constant);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

struct SoftmaxStats {
  /// Rows whose every entry was masked; these come out as all zeros.
  std::size_t degenerate_rows = 0;
};

/// Softmax over the last dimension. Entries of `additive_mask` are 0 or the
/// dtype's mask sentinel; sentinel entries get exactly zero weight. The mask
/// broadcasts numpy-style against x (same rank, extents 1 or equal).
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x);
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x, const Tensor<T>& additive_mask,
                          SoftmaxStats* stats = nullptr);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

/// Exact-erf GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

/// Inverted dropout. p == 0 returns x itself.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng);

/// Same-length sliding max over the sequence axis of x[l x d] or x[B x l x d].
/// Window must be odd and stride 1. Positions outside the sequence, and
/// positions with valid[b*l + i] == 0, never win. A window with no valid
/// position yields 0. Backward routes to the lowest-index maximum.
template <typename T>
Tensor<T> max_pool1d(const Tensor<T>& x, std::size_t window, std::size_t stride,
                     std::span<const std::uint8_t> valid = {});

/// Rows of table[V x d] selected by ids.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids);

/// Rows of x (viewed as [rows x last_dim]) at the given indices.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// [B x l x d] -> [B x h x l x d/h].
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads);

/// [B x h x l x dh] -> [B x l x h*dh].
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x);

/// alpha * a * b (or a * b^T) over matching leading batch dimensions.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false, T alpha = T(1));

/// Mean of x[B x l x d] rows per batch over positions with valid == 1.
/// Throws when a batch element has no valid position.
template <typename T>
Tensor<T> masked_mean_rows(const Tensor<T>& x, std::span<const std::uint8_t> valid);

/// Mean cross-entropy of logits[n x C] over labels != kIgnoreLabel.
/// Throws when every label is ignored.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels);

}  // namespace hybridbert
