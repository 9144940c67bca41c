// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0
//
// AdamW, the warmup/decay schedule, the deterministic pretraining loop and
// its checkpoints.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "hybridbert/checkpoint.hpp"
#include "hybridbert/model.hpp"

namespace hybridbert {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 50;
  std::size_t total_steps = 500;
  std::size_t batch_size = 8;
  double grad_clip_norm = 1.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  std::size_t eval_every = 100;  // 0 disables periodic evaluation
  std::size_t eval_batches = 8;
  std::uint64_t eval_seed = 1234;  // corruption seed of the held-out shard
  std::size_t eval_shard_stride = 10;  // every 10th document is held out
  DType dtype = DType::f32;
  bool timing_metrics = true;  // false writes tokens_per_sec = 0

  /// Throws ConfigError naming the offending key.
  void validate() const;
};

/// Linear warmup from 0 to cfg.lr over warmup_steps, then linear decay to 0 at
/// total_steps. Step numbering starts at 1.
double lr_schedule(std::size_t step, const TrainConfig& cfg);

/// Decoupled weight decay skips every name ending in .bias, .gamma or .beta.
bool applies_weight_decay(std::string_view name);

template <typename T>
class AdamW {
 public:
  using Named = std::pair<std::string, Tensor<T>>;

  explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}

  /// One update at step t >= 1 with learning rate lr. Gradients are clipped to
  /// cfg.grad_clip_norm by global norm first. Parameters without a gradient are
  /// left untouched. Returns the global gradient norm before clipping. Throws
  /// NumericError naming the first parameter with a non-finite gradient;
  /// nothing is modified in that case.
  double step(const std::vector<Named>& params, std::size_t t, double lr);

  std::vector<T>& first_moment(std::size_t i) { return m_.at(i); }
  std::vector<T>& second_moment(std::size_t i) { return v_.at(i); }
  std::size_t state_size() const noexcept { return m_.size(); }
  void reset_state(const std::vector<Named>& params);

 private:
  TrainConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
};

struct MetricsRecord {
  std::size_t step = 0;
  double loss_total = 0, loss_mlm = 0, loss_sso = 0;
  double lr = 0;
  double tokens_per_sec = 0;
  /// Bytes: parameters, gradients, both Adam moments and every activation
  /// recorded on the step's tape.
  std::size_t peak_resident_estimate = 0;
};

/// One JSON object with exactly the MetricsRecord field names.
std::string to_json_line(const MetricsRecord& r);

struct EvalResult {
  std::size_t step = 0;
  double loss_total = 0, loss_mlm = 0, loss_sso = 0;
  std::size_t batches = 0;
};

std::string to_json_line(const EvalResult& r);

/// Owns parameters and optimizer state. Batch k of training and of evaluation
/// depends only on the seeds and k, so runs are reproducible and resumable.
template <typename T>
class Trainer {
 public:
  Trainer(ModelConfig model_cfg, TrainConfig train_cfg, CorruptionConfig corruption, const DocStore& train_docs,
          const DocStore& eval_docs);

  /// Runs step steps_done() + 1. Throws NumericError on a non-finite loss or
  /// gradient before touching parameters.
  MetricsRecord step();

  /// Mean losses over cfg.eval_batches held-out batches with frozen corruption.
  EvalResult evaluate() const;

  std::size_t steps_done() const noexcept { return step_; }
  ModelParams<T>& params() noexcept { return params_; }
  const ModelParams<T>& params() const noexcept { return params_; }
  const ModelConfig& model_config() const noexcept { return model_cfg_; }
  const TrainConfig& train_config() const noexcept { return train_cfg_; }
  TokenBatch train_batch(std::size_t step) const { return train_source_.batch(step); }

  /// Parameters, Adam moments ("adam.m.<name>", "adam.v.<name>") and "meta.step".
  std::vector<ArrayRecord> checkpoint_arrays() const;
  void save(const std::filesystem::path& path) const;
  /// Validates everything before modifying any state.
  void restore(const std::vector<ArrayRecord>& arrays);
  void load(const std::filesystem::path& path) { restore(read_checkpoint(path)); }

 private:
  ModelConfig model_cfg_;
  TrainConfig train_cfg_;
  CorruptionConfig eval_corruption_;
  BatchSource train_source_;
  BatchSource eval_source_;
  ModelParams<T> params_;
  AdamW<T> optimizer_;
  std::size_t step_ = 0;
};

/// Array records for a parameter set alone (used by inspect and eval).
template <typename T>
std::vector<ArrayRecord> param_arrays(const ModelParams<T>& params);

/// Copies matching arrays into params; every parameter must be present.
template <typename T>
void load_param_arrays(ModelParams<T>& params, const std::vector<ArrayRecord>& arrays);

}  // namespace hybridbert
