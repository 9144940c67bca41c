// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0

#include "hybridbert/pooling.hpp"

#include <stdexcept>
#include <string>

#include "hybridbert/attention.hpp"
#include "hybridbert/errors.hpp"

namespace hybridbert {

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double stddev) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

template <typename T>
Tensor<T> eye(std::size_t d) {
  Tensor<T> t({d, d});
  for (std::size_t i = 0; i < d; ++i) t.data()[i * d + i] = T(1);
  return t;
}

template <typename T>
Tensor<T> as_batched(const Tensor<T>& x) {
  if (x.rank() == 3) return x;
  if (x.rank() == 2) return reshape(x, {1, x.dim(0), x.dim(1)});
  throw ShapeError("pooling: expected [l x d] or [B x l x d], got " + shape_str(x.shape()));
}

template <typename T>
Tensor<T> restore_rank(const Tensor<T>& y, std::size_t rank) {
  return rank == 3 ? y : reshape(y, {y.dim(1), y.dim(2)});
}

Mask invert(std::span<const std::uint8_t> padding, std::size_t rows) {
  Mask valid(rows, 1);
  for (std::size_t i = 0; i < padding.size(); ++i) valid[i] = padding[i] ? 0 : 1;
  return valid;
}

void check_padding(std::span<const std::uint8_t> padding, std::size_t rows) {
  if (!padding.empty() && padding.size() != rows) {
    throw ShapeError("padding mask has " + std::to_string(padding.size()) + " entries, expected " +
                     std::to_string(rows));
  }
}

template <typename T>
Tensor<T> ga_batched(const Tensor<T>& x3, const PoolingWeights<T>& w, std::span<const std::uint8_t> padding) {
  const std::size_t B = x3.dim(0), l = x3.dim(1);
  const Mask valid = invert(padding, B * l);
  for (std::size_t b = 0; b < B; ++b) {
    bool any = false;
    for (std::size_t i = 0; i < l; ++i) any = any || valid[b * l + i];
    if (!any) throw std::invalid_argument("global aggregation: every position is padded");
  }
  auto hq = linear(x3, w.query_w, w.query_b);
  auto hk = linear(x3, w.key_w, w.key_b);
  auto hv = linear(x3, w.value_w, w.value_b);
  auto ho = linear(x3, w.output_w, w.output_b);
  auto summary = masked_mean_rows(hq, valid);
  auto attended = single_query_cross_attention(summary, hk, hv, padding, w.heads);
  return mul_broadcast_rows(ho, attended);
}

template <typename T>
Tensor<T> lmp_batched(const Tensor<T>& x3, const PoolingWeights<T>& w, std::span<const std::uint8_t> padding) {
  const Mask valid = invert(padding, x3.dim(0) * x3.dim(1));
  return max_pool1d(linear(x3, w.local_w, w.local_b), w.window, w.stride, valid);
}

}  // namespace

template <typename T>
void PoolingWeights<T>::validate() const {
  const std::size_t d = query_w.dim(0);
  for (const auto* m : {&query_w, &key_w, &value_w, &output_w, &local_w}) {
    if (m->rank() != 2 || m->dim(0) != d || m->dim(1) != d) {
      throw ShapeError("pooling weights must be square [d x d], got " + shape_str(m->shape()));
    }
  }
  for (const auto* b : {&query_b, &key_b, &value_b, &output_b, &local_b}) {
    if (b->rank() != 1 || b->dim(0) != d) throw ShapeError("pooling bias must be [d], got " + shape_str(b->shape()));
  }
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("hidden width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
  if (window % 2 == 0 || stride != 1) throw std::invalid_argument("pooling window must be odd with stride 1");
}

template <typename T>
PoolingWeights<T> PoolingWeights<T>::random(std::size_t d, std::size_t heads, Rng& rng, double stddev) {
  PoolingWeights w;
  for (auto* m : {&w.query_w, &w.key_w, &w.value_w, &w.output_w, &w.local_w}) *m = random_tensor<T>({d, d}, rng, stddev);
  for (auto* b : {&w.query_b, &w.key_b, &w.value_b, &w.output_b, &w.local_b}) *b = random_tensor<T>({d}, rng, stddev);
  w.heads = heads;
  return w;
}

template <typename T>
PoolingWeights<T> PoolingWeights<T>::identity(std::size_t d, std::size_t heads) {
  PoolingWeights w;
  for (auto* m : {&w.query_w, &w.key_w, &w.value_w, &w.output_w, &w.local_w}) *m = eye<T>(d);
  for (auto* b : {&w.query_b, &w.key_b, &w.value_b, &w.output_b, &w.local_b}) *b = Tensor<T>({d});
  w.heads = heads;
  return w;
}

template <typename T>
Tensor<T> global_aggregation(const Tensor<T>& x, const PoolingWeights<T>& w,
                             std::span<const std::uint8_t> padding_mask) {
  w.validate();
  const Tensor<T> x3 = as_batched(x);
  check_padding(padding_mask, x3.dim(0) * x3.dim(1));
  return restore_rank(ga_batched(x3, w, padding_mask), x.rank());
}

template <typename T>
Tensor<T> local_max_pooling(const Tensor<T>& x, const PoolingWeights<T>& w,
                            std::span<const std::uint8_t> padding_mask) {
  w.validate();
  const Tensor<T> x3 = as_batched(x);
  check_padding(padding_mask, x3.dim(0) * x3.dim(1));
  return restore_rank(lmp_batched(x3, w, padding_mask), x.rank());
}

template <typename T>
Tensor<T> pooling_mixer(const Tensor<T>& x, const PoolingWeights<T>& w,
                        std::span<const std::uint8_t> padding_mask, const PoolingAblation& ablation) {
  if (ablation.disable_ga && ablation.disable_lmp) {
    throw std::invalid_argument("pooling mixer: both GA and LMP are disabled");
  }
  w.validate();
  const Tensor<T> x3 = as_batched(x);
  check_padding(padding_mask, x3.dim(0) * x3.dim(1));
  Tensor<T> out;
  if (ablation.disable_ga) {
    out = lmp_batched(x3, w, padding_mask);
  } else if (ablation.disable_lmp) {
    out = ga_batched(x3, w, padding_mask);
  } else {
    out = add(ga_batched(x3, w, padding_mask), lmp_batched(x3, w, padding_mask));
  }
  return restore_rank(out, x.rank());
}

#define HYBRIDBERT_INSTANTIATE(T)                                                                         \
  template struct PoolingWeights<T>;                                                                      \
  template Tensor<T> global_aggregation(const Tensor<T>&, const PoolingWeights<T>&, std::span<const std::uint8_t>); \
  template Tensor<T> local_max_pooling(const Tensor<T>&, const PoolingWeights<T>&, std::span<const std::uint8_t>);  \
  template Tensor<T> pooling_mixer(const Tensor<T>&, const PoolingWeights<T>&, std::span<const std::uint8_t>,      \
                                   const PoolingAblation&);

HYBRIDBERT_INSTANTIATE(float)
HYBRIDBERT_INSTANTIATE(double)

#undef HYBRIDBERT_INSTANTIATE

}  // namespace hybridbert
