// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0
//
// Scalar-loop reference implementations used only by tests. Everything is
// row-major std::vector<double>; nothing here touches the tape.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "hybridbert/attention.hpp"
#include "hybridbert/pooling.hpp"
#include "hybridbert/random.hpp"
#include "hybridbert/tensor.hpp"

namespace oracle {

using Mat = std::vector<double>;

inline Mat values(const hybridbert::Tensor<double>& t) { return Mat(t.data().begin(), t.data().end()); }

inline hybridbert::Tensor<double> random_tensor(hybridbert::Shape shape, hybridbert::Rng& rng, double scale = 1.0) {
  hybridbert::Tensor<double> t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

inline hybridbert::Tensor<float> random_tensor_f(hybridbert::Shape shape, hybridbert::Rng& rng, double scale = 1.0) {
  hybridbert::Tensor<float> t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(scale * rng.normal());
  return t;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// [m x k] * [k x n]
inline Mat matmul(const Mat& a, const Mat& b, std::size_t m, std::size_t k, std::size_t n) {
  Mat c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

// x[rows x k] * w[k x n] + b[n]
inline Mat linear(const Mat& x, const Mat& w, const Mat& b, std::size_t rows, std::size_t k, std::size_t n) {
  Mat y = matmul(x, w, rows, k, n);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] += b[j];
  return y;
}

inline Mat layer_norm(const Mat& x, const Mat& gamma, const Mat& beta, std::size_t rows, std::size_t d, double eps) {
  Mat y(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0, var = 0;
    for (std::size_t c = 0; c < d; ++c) mu += x[r * d + c];
    mu /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) var += (x[r * d + c] - mu) * (x[r * d + c] - mu);
    var /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) y[r * d + c] = gamma[c] * (x[r * d + c] - mu) / std::sqrt(var + eps) + beta[c];
  }
  return y;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Softmax of one row restricted to keys with keep[j] != 0; excluded keys get 0.
inline std::vector<double> softmax_row(const std::vector<double>& logits, const std::vector<int>& keep) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < logits.size(); ++j)
    if (keep[j]) mx = std::max(mx, logits[j]);
  std::vector<double> p(logits.size(), 0.0);
  double z = 0;
  for (std::size_t j = 0; j < logits.size(); ++j)
    if (keep[j]) z += (p[j] = std::exp(logits[j] - mx));
  if (z > 0)
    for (double& v : p) v /= z;
  return p;
}

// Self-attention over one sequence x[l x d]. Keys with excluded[j] are removed
// before softmax; keys with dropped[j] are zeroed after it.
inline Mat attention(const Mat& x, const hybridbert::AttentionWeights<double>& w, std::size_t l,
                     const std::vector<int>& excluded, const std::vector<int>& dropped) {
  const std::size_t d = w.width(), h = w.heads, dh = d / h;
  const Mat q = linear(x, values(w.query_w), values(w.query_b), l, d, d);
  const Mat k = linear(x, values(w.key_w), values(w.key_b), l, d, d);
  const Mat v = linear(x, values(w.value_w), values(w.value_b), l, d, d);
  std::vector<int> keep(l);
  for (std::size_t j = 0; j < l; ++j) keep[j] = excluded.empty() || !excluded[j];
  Mat ctx(l * d, 0.0);
  for (std::size_t head = 0; head < h; ++head) {
    for (std::size_t i = 0; i < l; ++i) {
      std::vector<double> logits(l);
      for (std::size_t j = 0; j < l; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += q[i * d + head * dh + c] * k[j * d + head * dh + c];
        logits[j] = s / std::sqrt(static_cast<double>(dh));
      }
      auto p = softmax_row(logits, keep);
      for (std::size_t j = 0; j < l; ++j)
        if (!dropped.empty() && dropped[j]) p[j] = 0;
      for (std::size_t j = 0; j < l; ++j)
        for (std::size_t c = 0; c < dh; ++c) ctx[i * d + head * dh + c] += p[j] * v[j * d + head * dh + c];
    }
  }
  return linear(ctx, values(w.output_w), values(w.output_b), l, d, d);
}

// One query q[d] attending over keys/values [l x d]; padded keys excluded.
inline std::vector<double> cross_attention(const std::vector<double>& q, const Mat& keys, const Mat& vals, std::size_t l,
                                           std::size_t d, std::size_t heads, const std::vector<int>& padded) {
  const std::size_t dh = d / heads;
  std::vector<int> keep(l);
  for (std::size_t j = 0; j < l; ++j) keep[j] = padded.empty() || !padded[j];
  std::vector<double> out(d, 0.0);
  for (std::size_t head = 0; head < heads; ++head) {
    std::vector<double> logits(l);
    for (std::size_t j = 0; j < l; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < dh; ++c) s += q[head * dh + c] * keys[j * d + head * dh + c];
      logits[j] = s / std::sqrt(static_cast<double>(dh));
    }
    const auto p = softmax_row(logits, keep);
    for (std::size_t j = 0; j < l; ++j)
      for (std::size_t c = 0; c < dh; ++c) out[head * dh + c] += p[j] * vals[j * d + head * dh + c];
  }
  return out;
}

// Global aggregation step by step: projections, mean over unpadded rows,
// one-query attention, Hadamard product with H_O.
inline Mat global_aggregation(const Mat& x, const hybridbert::PoolingWeights<double>& w, std::size_t l,
                              const std::vector<int>& padded) {
  const std::size_t d = w.width();
  const Mat hq = linear(x, values(w.query_w), values(w.query_b), l, d, d);
  const Mat hk = linear(x, values(w.key_w), values(w.key_b), l, d, d);
  const Mat hv = linear(x, values(w.value_w), values(w.value_b), l, d, d);
  const Mat ho = linear(x, values(w.output_w), values(w.output_b), l, d, d);
  std::vector<double> avg(d, 0.0);
  double n = 0;
  for (std::size_t i = 0; i < l; ++i) {
    if (!padded.empty() && padded[i]) continue;
    n += 1;
    for (std::size_t c = 0; c < d; ++c) avg[c] += hq[i * d + c];
  }
  for (double& v : avg) v /= n;
  const auto att = cross_attention(avg, hk, hv, l, d, w.heads, padded);
  Mat out(l * d);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t c = 0; c < d; ++c) out[i * d + c] = ho[i * d + c] * att[c];
  return out;
}

// Same-length window max over rows of y[l x d], skipping padded rows; 0 if none.
inline Mat window_max(const Mat& y, std::size_t l, std::size_t d, std::size_t window, const std::vector<int>& padded) {
  const long half = static_cast<long>(window / 2);
  Mat out(l * d, 0.0);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      double best = -std::numeric_limits<double>::infinity();
      for (long j = static_cast<long>(i) - half; j <= static_cast<long>(i) + half; ++j) {
        if (j < 0 || j >= static_cast<long>(l)) continue;
        if (!padded.empty() && padded[static_cast<std::size_t>(j)]) continue;
        best = std::max(best, y[static_cast<std::size_t>(j) * d + c]);
      }
      out[i * d + c] = std::isinf(best) ? 0.0 : best;
    }
  return out;
}

inline Mat local_max_pooling(const Mat& x, const hybridbert::PoolingWeights<double>& w, std::size_t l,
                             const std::vector<int>& padded) {
  const std::size_t d = w.width();
  return window_max(linear(x, values(w.local_w), values(w.local_b), l, d, d), l, d, w.window, padded);
}

// Mean over rows with label != -100 of -log softmax(logits)[label].
inline double cross_entropy(const Mat& logits, const std::vector<std::int32_t>& labels, std::size_t classes) {
  double total = 0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] == -100) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, logits[r * classes + c]);
    double z = 0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(logits[r * classes + c] - mx);
    total += -(logits[r * classes + static_cast<std::size_t>(labels[r])] - mx - std::log(z));
    ++n;
  }
  return total / static_cast<double>(n);
}

}  // namespace oracle
