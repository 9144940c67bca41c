// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0
//
// HybridBERT encoder: embeddings, a stack of post-LN blocks whose token mixer
// is either self-attention or the pooling network, and the MLM/SSO heads.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hybridbert/attention.hpp"
#include "hybridbert/data.hpp"
#include "hybridbert/pooling.hpp"

namespace hybridbert {

enum class MixerKind : char { Attention = 'A', Pooling = 'P' };

/// Mixer kind per layer, bottom (input side) first.
struct LayerPlan {
  std::vector<MixerKind> layers;

  std::size_t size() const noexcept { return layers.size(); }
  std::size_t count(MixerKind kind) const;
  bool operator==(const LayerPlan&) const = default;
};

/// Accepts "12A", "4P" or "B8A+T4P" (B = bottom run, T = top run). Throws
/// ParseError on anything else, including zero counts.
LayerPlan parse_layer_plan(std::string_view text);

/// "NK" for a single run, "BnK+TmK'" for two runs. Plans with more than two
/// runs have no compact form and are spelled out one letter per layer.
std::string format_layer_plan(const LayerPlan& plan);

struct ModelConfig {
  std::size_t hidden = 128;
  std::size_t heads = 4;
  std::size_t ffn = 512;
  std::size_t vocab = 8192;
  std::size_t max_len = 128;
  std::size_t num_layers = 8;
  LayerPlan plan = parse_layer_plan("B4A+T4P");
  double dropout = 0.0;
  DropMaskConfig dropmask;
  PoolingAblation ablation;
  double layer_norm_eps = 1e-12;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending key.
  void validate() const;
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma, beta;
};

template <typename T>
struct BlockParams {
  MixerKind kind = MixerKind::Attention;
  AttentionWeights<T> attention;  // set when kind == Attention
  PoolingWeights<T> pooling;      // set when kind == Pooling
  LayerNormParams<T> mixer_ln;
  Tensor<T> ffn_in_w, ffn_in_b, ffn_out_w, ffn_out_b;
  LayerNormParams<T> ffn_ln;
};

/// All trainable arrays. Structured members and the named list share storage.
template <typename T>
class ModelParams {
 public:
  using Named = std::pair<std::string, Tensor<T>>;

  /// Truncated normal (sigma 0.02, cut at 2 sigma) weights, zero biases,
  /// unit layer-norm gains.
  static ModelParams init(const ModelConfig& cfg, Rng& rng);
  static ModelParams zeros(const ModelConfig& cfg);

  /// Independent copy with the same names and values.
  ModelParams clone() const;

  const std::vector<Named>& named() const noexcept { return named_; }
  Tensor<T>* find(std::string_view name);
  const Tensor<T>* find(std::string_view name) const;
  Tensor<T>& at(std::string_view name);
  std::size_t element_count() const;
  void zero_grad();

  Tensor<T> word, position, type;
  LayerNormParams<T> embed_ln;
  std::vector<BlockParams<T>> layers;
  Tensor<T> mlm_transform_w, mlm_transform_b;
  LayerNormParams<T> mlm_transform_ln;
  Tensor<T> mlm_decoder_b;  // decoder weight is `word`
  Tensor<T> sso_w, sso_b;

 private:
  void register_all();
  std::vector<Named> named_;
};

/// Embedding layer-norm of word[id] + position[j] + type[segment], [B x l x d].
template <typename T>
Tensor<T> embed(const TokenBatch& batch, const ModelParams<T>& params, const ModelConfig& cfg);

/// Top hidden states [B x l x d]. `per_layer`, when given, receives each
/// block's output. Dropout is applied only when `rng` is non-null.
template <typename T>
Tensor<T> encoder_forward(const TokenBatch& batch, const ModelParams<T>& params, const ModelConfig& cfg,
                          std::vector<Tensor<T>>* per_layer = nullptr, Rng* rng = nullptr);

/// One post-LN block applied to x[B x l x d].
template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, const BlockParams<T>& block, const TokenBatch& batch,
                        const ModelConfig& cfg, Rng* rng = nullptr);

/// Mean cross-entropy of the tied MLM head over labels != kIgnoreLabel.
template <typename T>
Tensor<T> mlm_loss(const Tensor<T>& hidden, const ModelParams<T>& params, std::span<const std::int32_t> labels,
                   const ModelConfig& cfg);

/// 3-way cross-entropy on the hidden state at position 0 of each sequence.
template <typename T>
Tensor<T> sso_loss(const Tensor<T>& hidden, const ModelParams<T>& params, std::span<const std::int32_t> labels);

template <typename T>
struct Losses {
  Tensor<T> total, mlm, sso;
};

/// total = mlm + sso.
template <typename T>
Losses<T> pretraining_losses(const TokenBatch& batch, const ModelParams<T>& params, const ModelConfig& cfg,
                             Rng* rng = nullptr);

}  // namespace hybridbert
