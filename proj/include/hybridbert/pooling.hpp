// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-granularity pooling token mixer: Global Aggregation (GA) plus Local
// Max-Pooling (LMP), summed. Linear in sequence length; no l x l intermediate.

#pragma once

#include <cstdint>
#include <span>

#include "hybridbert/ops.hpp"

namespace hybridbert {

template <typename T>
struct PoolingWeights {
  Tensor<T> query_w, query_b;
  Tensor<T> key_w, key_b;
  Tensor<T> value_w, value_b;
  Tensor<T> output_w, output_b;  // fusion projection for GA
  Tensor<T> local_w, local_b;    // projection feeding LMP
  std::size_t heads = 1;
  std::size_t window = 3;
  std::size_t stride = 1;

  std::size_t width() const { return query_w.dim(0); }
  void validate() const;

  static PoolingWeights random(std::size_t d, std::size_t heads, Rng& rng, double stddev);
  static PoolingWeights identity(std::size_t d, std::size_t heads);
};

struct PoolingAblation {
  bool disable_ga = false;
  bool disable_lmp = false;
};

/// H_O * Attention(mean of H_Q over unpadded rows, H_K, H_V), the product
/// broadcast over rows. Throws when a sequence is entirely padding.
template <typename T>
Tensor<T> global_aggregation(const Tensor<T>& x, const PoolingWeights<T>& w,
                             std::span<const std::uint8_t> padding_mask);

/// Sliding max (window 3, stride 1) over x W_L + b_L; padded rows never win.
template <typename T>
Tensor<T> local_max_pooling(const Tensor<T>& x, const PoolingWeights<T>& w,
                            std::span<const std::uint8_t> padding_mask);

/// GA + LMP, or the surviving branch alone under an ablation.
template <typename T>
Tensor<T> pooling_mixer(const Tensor<T>& x, const PoolingWeights<T>& w,
                        std::span<const std::uint8_t> padding_mask, const PoolingAblation& ablation = {});

}  // namespace hybridbert
