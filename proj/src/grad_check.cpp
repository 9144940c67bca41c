// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0

#include "hybridbert/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "hybridbert/random.hpp"

namespace hybridbert {

GradCheckResult grad_check(const ScalarFunction& f, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options) {
  for (auto& in : inputs) {
    in.zero_grad();
    in.set_requires_grad(true);
  }
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> loss = f(inputs);
    tape.backward(loss);
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].numel(); ++i) coords.emplace_back(t, i);
  }
  if (options.max_coordinates > 0 && coords.size() > options.max_coordinates) {
    Rng rng(options.seed);
    for (std::size_t i = 0; i < options.max_coordinates; ++i) {
      const std::size_t j = i + rng.below(coords.size() - i);
      std::swap(coords[i], coords[j]);
    }
    coords.resize(options.max_coordinates);
  }

  const double h = options.step;
  NoGradScope<double> no_grad;
  GradCheckResult result;
  result.coordinates = coords.size();
  for (auto [t, i] : coords) {
    auto values = inputs[t].data();
    const double saved = values[i];
    values[i] = saved + h;
    const double f_plus = f(inputs).item();
    values[i] = saved - h;
    const double f_minus = f(inputs).item();
    values[i] = saved;
    const double numeric = (f_plus - f_minus) / (2.0 * h);
    const double analytic = inputs[t].has_grad() ? inputs[t].grad()[i] : 0.0;
    const double denom = std::max({std::abs(analytic), std::abs(numeric), options.denominator_floor});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > result.max_rel_error || (result.max_rel_error == 0.0 && t == coords.front().first &&
                                       i == coords.front().second)) {
      result.max_rel_error = rel;
      result.worst_input = t;
      result.worst_index = i;
      result.worst_analytic = analytic;
      result.worst_numeric = numeric;
    }
  }
  for (auto& in : inputs) in.zero_grad();
  return result;
}

}  // namespace hybridbert
