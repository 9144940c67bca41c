// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0
//
// Mixer microbenchmarks: forward+backward wall time versus sequence length,
// log-log exponent fits, and closed-form activation-element counts.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hybridbert/model.hpp"

namespace hybridbert {

struct TimingSample {
  std::size_t length = 0;
  double median_seconds = 0;
  double iqr_seconds = 0;
  std::size_t activation_elements = 0;
  std::size_t inner_reps = 1;
};

struct ScalingReport {
  MixerKind kind = MixerKind::Attention;
  std::size_t hidden = 0;
  std::size_t heads = 0;
  std::vector<TimingSample> samples;
  double exponent = 0;
  std::string host;
};

struct BenchOptions {
  std::size_t hidden = 128;
  std::size_t heads = 4;
  std::size_t batch = 1;
  std::size_t warmup = 3;
  std::size_t reps = 9;
  /// Inner repetitions grow until one timed sample lasts at least this long.
  double min_sample_seconds = 2e-3;
  std::uint64_t seed = 0;
};

/// Times one mixer (forward + backward, float32, single thread) at each
/// length. Inputs are redrawn every repetition from a fixed seed.
ScalingReport time_mixer(MixerKind kind, std::span<const std::size_t> lengths, const BenchOptions& options = {});

/// Least-squares slope of log(t) against log(l). Needs at least three points;
/// throws std::invalid_argument on non-positive values.
double fit_exponent(std::span<const std::pair<double, double>> points);
double fit_exponent(const std::vector<TimingSample>& samples);

/// Elements recorded on the tape by one mixer on a [batch x l x d] input
/// without padding.
std::size_t mixer_activation_elements(MixerKind kind, std::size_t batch, std::size_t l, std::size_t d,
                                      std::size_t heads);

/// Mixer plus residual, layer norms and feed-forward sublayer.
std::size_t block_activation_elements(MixerKind kind, std::size_t batch, std::size_t l, std::size_t d,
                                      std::size_t heads, std::size_t ffn);

struct ActivationEstimate {
  std::vector<std::size_t> per_layer;
  std::size_t total = 0;
};

/// Per-layer activation elements of the encoder stack. Parameters, optimizer
/// state, embeddings and output heads are not counted.
ActivationEstimate estimate_activation_memory(const LayerPlan& plan, std::size_t d, std::size_t heads,
                                              std::size_t ffn, std::size_t l, std::size_t batch);

std::string host_descriptor();

/// `mixer,l,median_s,iqr_s,activation_elements`, one row per sample.
void write_scaling_csv(std::ostream& out, std::span<const ScalingReport> reports);

/// JSON summary: exponents, host, and plan-level activation totals per length.
std::string scaling_summary_json(std::span<const ScalingReport> reports, std::span<const std::string> plans,
                                 std::size_t ffn);

}  // namespace hybridbert
