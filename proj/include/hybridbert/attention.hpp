// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-head self-attention, its DropMask variant, and the single-query
// cross-attention used by Global Aggregation.
//
// Hidden states are [l x d] or [B x l x d]; per-position masks are flat with
// B*l entries (B = 1 for rank-2 input). An empty padding mask means no padding.

#pragma once

#include <cstdint>
#include <span>

#include "hybridbert/ops.hpp"

namespace hybridbert {

template <typename T>
struct AttentionWeights {
  Tensor<T> query_w, query_b;
  Tensor<T> key_w, key_b;
  Tensor<T> value_w, value_b;
  Tensor<T> output_w, output_b;
  std::size_t heads = 1;

  std::size_t width() const { return query_w.dim(0); }
  void validate() const;

  static AttentionWeights random(std::size_t d, std::size_t heads, Rng& rng, double stddev);
  /// Identity projections, zero biases.
  static AttentionWeights identity(std::size_t d, std::size_t heads);
};

struct DropMaskConfig {
  bool enabled = false;
  /// true: masked keys are excluded before softmax, surviving weights sum to 1.
  /// false: softmax over every key, then masked-key terms are dropped from the sum.
  bool renormalize = true;
};

struct AttentionStats {
  /// Query rows that had no admissible key (zero output before projection).
  std::size_t degenerate_rows = 0;
};

/// [B x 1 x 1 x l] additive mask: sentinel where excluded[i] is set.
template <typename T>
Tensor<T> key_mask(std::size_t batch, std::size_t len, std::span<const std::uint8_t> excluded);

template <typename T>
Tensor<T> multi_head_self_attention(const Tensor<T>& x, const AttentionWeights<T>& w,
                                    std::span<const std::uint8_t> padding_mask,
                                    AttentionStats* stats = nullptr);

/// Self-attention in which no query may attend to a [MASK] key. [MASK]
/// positions still act as queries. Combined with padding by union.
template <typename T>
Tensor<T> dropmask_self_attention(const Tensor<T>& x, const AttentionWeights<T>& w,
                                  std::span<const std::uint8_t> padding_mask,
                                  std::span<const std::uint8_t> mask_positions, const DropMaskConfig& cfg,
                                  AttentionStats* stats = nullptr);

/// One query row per batch element (q is [d] or [B x d]) attending over keys
/// and values [l x d] / [B x l x d]. O(l d). No output projection. Throws
/// when every key of a batch element is padded.
template <typename T>
Tensor<T> single_query_cross_attention(const Tensor<T>& q, const Tensor<T>& keys, const Tensor<T>& values,
                                       std::span<const std::uint8_t> padding_mask, std::size_t heads);

}  // namespace hybridbert
