// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hybridbert/tensor.hpp"

namespace hybridbert {

struct GradCheckOptions {
  double step = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded sample of this many.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
  /// Smallest denominator; below it the error is absolute, which keeps
  /// rounding noise on near-zero gradients from dominating.
  double denominator_floor = 1e-3;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

using ScalarFunction = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares tape gradients of `f` against central differences at each input
/// coordinate, using |a - n| / max(|a|, |n|, floor). Inputs are leaves; their
/// values are restored and gradients cleared on return.
GradCheckResult grad_check(const ScalarFunction& f, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options = {});

}  // namespace hybridbert
