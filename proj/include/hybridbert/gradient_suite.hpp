// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference checks over every differentiable op and over small
// full models, at float64.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hybridbert/data.hpp"
#include "hybridbert/grad_check.hpp"
#include "hybridbert/model.hpp"

namespace hybridbert {

struct GradientCase {
  std::string name;
  GradCheckResult result;
};

struct GradientSuiteOptions {
  std::uint64_t seed = 17;
  double step = 1e-5;
  /// Sampled coordinates per full-model case.
  std::size_t model_coordinates = 64;
  std::vector<std::string> model_plans = {"2A", "2P", "B1A+T1P", "B1P+T1A"};
};

/// One case per op, named after it.
std::vector<GradientCase> op_gradient_cases(const GradientSuiteOptions& options = {});

/// One case per plan ("model:<plan>"): batch 2 x 16, hidden 32, total loss.
std::vector<GradientCase> model_gradient_cases(const GradientSuiteOptions& options = {});

/// Random [batch x len] pretraining batch with [CLS]/[SEP] framing, padding
/// at the tail of the second sequence and several labeled positions.
TokenBatch random_token_batch(std::size_t batch, std::size_t len, std::size_t vocab, Rng& rng);

/// Small float64 model config used by the full-model checks.
ModelConfig gradient_model_config(const std::string& plan, std::size_t vocab);

}  // namespace hybridbert
