// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0

#include "hybridbert/bench.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

namespace hybridbert {
namespace {

using Clock = std::chrono::steady_clock;

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct MixerHarness {
  MixerKind kind;
  AttentionWeights<float> attention;
  PoolingWeights<float> pooling;

  MixerHarness(MixerKind k, std::size_t d, std::size_t heads, Rng& rng) : kind(k) {
    if (kind == MixerKind::Attention) {
      attention = AttentionWeights<float>::random(d, heads, rng, 0.02);
      for (auto* t : {&attention.query_w, &attention.query_b, &attention.key_w, &attention.key_b, &attention.value_w,
                      &attention.value_b, &attention.output_w, &attention.output_b}) {
        t->set_requires_grad(true);
      }
    } else {
      pooling = PoolingWeights<float>::random(d, heads, rng, 0.02);
      for (auto* t : {&pooling.query_w, &pooling.query_b, &pooling.key_w, &pooling.key_b, &pooling.value_w,
                      &pooling.value_b, &pooling.output_w, &pooling.output_b, &pooling.local_w, &pooling.local_b}) {
        t->set_requires_grad(true);
      }
    }
  }

  void zero_grad() {
    if (kind == MixerKind::Attention) {
      for (auto* t : {&attention.query_w, &attention.query_b, &attention.key_w, &attention.key_b, &attention.value_w,
                      &attention.value_b, &attention.output_w, &attention.output_b}) {
        t->zero_grad();
      }
    } else {
      for (auto* t : {&pooling.query_w, &pooling.query_b, &pooling.key_w, &pooling.key_b, &pooling.value_w,
                      &pooling.value_b, &pooling.output_w, &pooling.output_b, &pooling.local_w, &pooling.local_b}) {
        t->zero_grad();
      }
    }
  }

  void run(const Tensor<float>& x) {
    zero_grad();
    Tape<float> tape;
    TapeScope<float> scope(tape);
    const Mask none;
    auto y = kind == MixerKind::Attention ? multi_head_self_attention(x, attention, none)
                                          : pooling_mixer(x, pooling, none);
    tape.backward(sum(y));
  }
};

Tensor<float> random_input(std::size_t batch, std::size_t l, std::size_t d, Rng& rng) {
  Tensor<float> x({batch, l, d});
  for (float& v : x.data()) v = static_cast<float>(rng.normal());
  x.set_requires_grad(true);
  return x;
}

}  // namespace

ScalingReport time_mixer(MixerKind kind, std::span<const std::size_t> lengths, const BenchOptions& options) {
  if (lengths.empty()) throw std::invalid_argument("time_mixer: no lengths");
  if (options.reps == 0) throw std::invalid_argument("time_mixer: reps must be positive");
  ScalingReport report;
  report.kind = kind;
  report.hidden = options.hidden;
  report.heads = options.heads;
  report.host = host_descriptor();
  Rng weight_rng(options.seed);
  MixerHarness harness(kind, options.hidden, options.heads, weight_rng);

  for (std::size_t l : lengths) {
    Rng rng = Rng::derive(options.seed, l);
    TimingSample sample;
    sample.length = l;
    sample.activation_elements = mixer_activation_elements(kind, options.batch, l, options.hidden, options.heads);
    for (std::size_t i = 0; i < options.warmup; ++i) harness.run(random_input(options.batch, l, options.hidden, rng));

    // Grow the inner loop until a sample clears the timer floor.
    for (;;) {
      std::vector<Tensor<float>> inputs;
      for (std::size_t i = 0; i < sample.inner_reps; ++i) inputs.push_back(random_input(options.batch, l, options.hidden, rng));
      const auto t0 = Clock::now();
      for (const auto& x : inputs) harness.run(x);
      const double elapsed = std::chrono::duration<double>(Clock::now() - t0).count();
      if (elapsed >= options.min_sample_seconds || sample.inner_reps >= (1u << 16)) break;
      sample.inner_reps *= 2;
    }

    std::vector<double> times;
    for (std::size_t r = 0; r < options.reps; ++r) {
      std::vector<Tensor<float>> inputs;
      for (std::size_t i = 0; i < sample.inner_reps; ++i) inputs.push_back(random_input(options.batch, l, options.hidden, rng));
      const auto t0 = Clock::now();
      for (const auto& x : inputs) harness.run(x);
      times.push_back(std::chrono::duration<double>(Clock::now() - t0).count() / static_cast<double>(sample.inner_reps));
    }
    sample.median_seconds = quantile(times, 0.5);
    sample.iqr_seconds = quantile(times, 0.75) - quantile(times, 0.25);
    report.samples.push_back(sample);
  }
  report.exponent = report.samples.size() >= 3 ? fit_exponent(report.samples) : 0.0;
  return report;
}

double fit_exponent(std::span<const std::pair<double, double>> points) {
  if (points.size() < 3) throw std::invalid_argument("fit_exponent: need at least 3 points");
  double sx = 0, sy = 0;
  std::vector<std::pair<double, double>> logs;
  for (const auto& [l, t] : points) {
    if (!(l > 0) || !(t > 0)) throw std::invalid_argument("fit_exponent: lengths and times must be positive");
    logs.emplace_back(std::log(l), std::log(t));
    sx += logs.back().first;
    sy += logs.back().second;
  }
  const double n = static_cast<double>(logs.size());
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (const auto& [x, y] : logs) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  if (sxx == 0) throw std::invalid_argument("fit_exponent: lengths must not all be equal");
  return sxy / sxx;
}

double fit_exponent(const std::vector<TimingSample>& samples) {
  std::vector<std::pair<double, double>> points;
  for (const auto& s : samples) points.emplace_back(static_cast<double>(s.length), s.median_seconds);
  return fit_exponent(points);
}

std::size_t mixer_activation_elements(MixerKind kind, std::size_t batch, std::size_t l, std::size_t d,
                                      std::size_t heads) {
  const std::size_t n = batch * l * d;
  if (kind == MixerKind::Attention) {
    // q/k/v projections and head splits, scores, probabilities, context,
    // merged heads, output projection.
    return 9 * n + 2 * batch * heads * l * l;
  }
  // GA: four projections, k/v head splits, Hadamard product (7n); six [B x d]
  // summaries around the one-query attention; h x l scores and weights.
  // LMP: projection and window max (2n). Sum of branches (n).
  return 10 * n + 6 * batch * d + 2 * batch * heads * l;
}

std::size_t block_activation_elements(MixerKind kind, std::size_t batch, std::size_t l, std::size_t d,
                                      std::size_t heads, std::size_t ffn) {
  const std::size_t n = batch * l * d;
  // Two residual adds, two layer norms, FFN output (5n); FFN hidden and its GELU.
  return mixer_activation_elements(kind, batch, l, d, heads) + 5 * n + 2 * batch * l * ffn;
}

ActivationEstimate estimate_activation_memory(const LayerPlan& plan, std::size_t d, std::size_t heads,
                                              std::size_t ffn, std::size_t l, std::size_t batch) {
  ActivationEstimate est;
  for (MixerKind kind : plan.layers) {
    est.per_layer.push_back(block_activation_elements(kind, batch, l, d, heads, ffn));
    est.total += est.per_layer.back();
  }
  return est;
}

std::string host_descriptor() {
  std::string host;
  utsname u{};
  if (uname(&u) == 0) host = std::string(u.sysname) + " " + u.release + " " + u.machine;
#if defined(__clang__)
  host += " clang " __clang_version__;
#elif defined(__GNUC__)
  host += " gcc " __VERSION__;
#endif
  return host;
}

void write_scaling_csv(std::ostream& out, std::span<const ScalingReport> reports) {
  out << "mixer,l,median_s,iqr_s,activation_elements\n";
  for (const auto& r : reports) {
    const char* name = r.kind == MixerKind::Attention ? "attention" : "pooling";
    for (const auto& s : r.samples) {
      out << name << ',' << s.length << ',' << s.median_seconds << ',' << s.iqr_seconds << ','
          << s.activation_elements << '\n';
    }
  }
}

std::string scaling_summary_json(std::span<const ScalingReport> reports, std::span<const std::string> plans,
                                 std::size_t ffn) {
  nlohmann::ordered_json j;
  j["note"] = "activation_elements counts tape-recorded activations only; parameters and optimizer state are excluded";
  j["host"] = reports.empty() ? host_descriptor() : reports.front().host;
  j["mixers"] = nlohmann::ordered_json::array();
  std::vector<std::size_t> lengths;
  std::size_t d = 0, heads = 0;
  for (const auto& r : reports) {
    nlohmann::ordered_json m;
    m["mixer"] = r.kind == MixerKind::Attention ? "attention" : "pooling";
    m["hidden"] = r.hidden;
    m["heads"] = r.heads;
    m["exponent"] = r.exponent;
    m["lengths"] = nlohmann::ordered_json::array();
    m["median_s"] = nlohmann::ordered_json::array();
    for (const auto& s : r.samples) {
      m["lengths"].push_back(s.length);
      m["median_s"].push_back(s.median_seconds);
      if (std::find(lengths.begin(), lengths.end(), s.length) == lengths.end()) lengths.push_back(s.length);
    }
    d = r.hidden;
    heads = r.heads;
    j["mixers"].push_back(m);
  }
  nlohmann::ordered_json mem = nlohmann::ordered_json::object();
  for (const auto& p : plans) {
    const LayerPlan plan = parse_layer_plan(p);
    nlohmann::ordered_json totals = nlohmann::ordered_json::array();
    for (std::size_t l : lengths) totals.push_back(estimate_activation_memory(plan, d, heads, ffn, l, 1).total);
    mem[p] = totals;
  }
  j["plan_activation_elements"] = mem;
  return j.dump(2);
}

}  // namespace hybridbert
