// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0

#include "hybridbert/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "hybridbert/errors.hpp"

namespace hybridbert {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

template <typename T>
ConstMap<T> as_matrix(std::span<const T> s, std::size_t rows, std::size_t cols) {
  return ConstMap<T>(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <typename T>
MutMap<T> as_matrix(std::span<T> s, std::size_t rows, std::size_t cols) {
  return MutMap<T>(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
  }
}

std::size_t leading_rows(const Shape& s) { return shape_numel(s) / s.back(); }

// Maps each row (all dims but the last) of `target` to a row offset in a
// broadcast source of the same rank, plus the source stride along the last dim.
struct RowBroadcast {
  std::vector<std::size_t> row_offset;
  std::size_t last_stride = 1;
};

RowBroadcast broadcast_rows(const char* op, const Shape& target, const Shape& src) {
  if (src.size() != target.size()) shape_mismatch(op, target, src);
  const std::size_t r = target.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t acc = 1;
  for (std::size_t d = r; d-- > 0;) {
    if (src[d] != target[d] && src[d] != 1) shape_mismatch(op, target, src);
    stride[d] = (src[d] == 1 && target[d] != 1) ? 0 : acc;
    acc *= src[d];
  }
  RowBroadcast out;
  out.last_stride = stride[r - 1];
  const std::size_t rows = leading_rows(target);
  out.row_offset.resize(rows);
  std::vector<std::size_t> idx(r, 0);
  std::size_t offset = 0;
  for (std::size_t row = 0; row < rows; ++row) {
    out.row_offset[row] = offset;
    // increment the multi-index over dims [0, r-1)
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      offset += stride[d];
      if (idx[d] < target[d]) break;
      offset -= stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return out;
}

template <typename T>
bool is_masked(T v) {
  return v <= dtype_traits<T>::mask_value / T(2);
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_mismatch("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out({m, n});
  as_matrix(out.data(), m, n).noalias() = as_matrix(a.data(), m, k) * as_matrix(b.data(), k, n);
  return record_op<T>("matmul", out, {a, b}, [a, b, m, k, n](const BackwardContext<T>& ctx) {
    auto g = as_matrix(ctx.out_grad, m, n);
    if (!ctx.input_grads[0].empty()) {
      as_matrix(ctx.input_grads[0], m, k).noalias() += g * as_matrix(b.data(), k, n).transpose();
    }
    if (!ctx.input_grads[1].empty()) {
      as_matrix(ctx.input_grads[1], k, n).noalias() += as_matrix(a.data(), m, k).transpose() * g;
    }
  });
}

template <typename T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    shape_mismatch("matmul_bt", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor<T> out({m, n});
  as_matrix(out.data(), m, n).noalias() =
      as_matrix(a.data(), m, k) * as_matrix(b.data(), n, k).transpose();
  return record_op<T>("matmul_bt", out, {a, b}, [a, b, m, k, n](const BackwardContext<T>& ctx) {
    auto g = as_matrix(ctx.out_grad, m, n);
    if (!ctx.input_grads[0].empty()) {
      as_matrix(ctx.input_grads[0], m, k).noalias() += g * as_matrix(b.data(), n, k);
    }
    if (!ctx.input_grads[1].empty()) {
      as_matrix(ctx.input_grads[1], n, k).noalias() += g.transpose() * as_matrix(a.data(), m, k);
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (w.rank() != 2 || x.shape().back() != w.dim(0)) shape_mismatch("linear", x.shape(), w.shape());
  if (bias.rank() != 1 || bias.dim(0) != w.dim(1)) shape_mismatch("linear", w.shape(), bias.shape());
  const std::size_t k = w.dim(0), n = w.dim(1), r = leading_rows(x.shape());
  Shape out_shape = x.shape();
  out_shape.back() = n;
  Tensor<T> out(out_shape);
  auto y = as_matrix(out.data(), r, n);
  y.noalias() = as_matrix(x.data(), r, k) * as_matrix(w.data(), k, n);
  y.rowwise() += as_matrix(bias.data(), 1, n).row(0);
  return record_op<T>("linear", out, {x, w, bias}, [x, w, r, k, n](const BackwardContext<T>& ctx) {
    auto g = as_matrix(ctx.out_grad, r, n);
    if (!ctx.input_grads[0].empty()) {
      as_matrix(ctx.input_grads[0], r, k).noalias() += g * as_matrix(w.data(), k, n).transpose();
    }
    if (!ctx.input_grads[1].empty()) {
      as_matrix(ctx.input_grads[1], k, n).noalias() += as_matrix(x.data(), r, k).transpose() * g;
    }
    if (!ctx.input_grads[2].empty()) {
      as_matrix(ctx.input_grads[2], 1, n) += g.colwise().sum();
    }
  });
}

template <typename T>
Tensor<T> linear_bt(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (w.rank() != 2 || x.shape().back() != w.dim(1)) shape_mismatch("linear_bt", x.shape(), w.shape());
  if (bias.rank() != 1 || bias.dim(0) != w.dim(0)) shape_mismatch("linear_bt", w.shape(), bias.shape());
  const std::size_t n = w.dim(0), k = w.dim(1), r = leading_rows(x.shape());
  Shape out_shape = x.shape();
  out_shape.back() = n;
  Tensor<T> out(out_shape);
  auto y = as_matrix(out.data(), r, n);
  y.noalias() = as_matrix(x.data(), r, k) * as_matrix(w.data(), n, k).transpose();
  y.rowwise() += as_matrix(bias.data(), 1, n).row(0);
  return record_op<T>("linear_bt", out, {x, w, bias}, [x, w, r, k, n](const BackwardContext<T>& ctx) {
    auto g = as_matrix(ctx.out_grad, r, n);
    if (!ctx.input_grads[0].empty()) {
      as_matrix(ctx.input_grads[0], r, k).noalias() += g * as_matrix(w.data(), n, k);
    }
    if (!ctx.input_grads[1].empty()) {
      as_matrix(ctx.input_grads[1], n, k).noalias() += g.transpose() * as_matrix(x.data(), r, k);
    }
    if (!ctx.input_grads[2].empty()) {
      as_matrix(ctx.input_grads[2], 1, n) += g.colwise().sum();
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("add", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  return record_op<T>("add", out, {a, b}, [](const BackwardContext<T>& ctx) {
    for (std::size_t j = 0; j < 2; ++j) {
      auto gi = ctx.input_grads[j];
      if (gi.empty()) continue;
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += ctx.out_grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
  return record_op<T>("mul", out, {a, b}, [a, b](const BackwardContext<T>& ctx) {
    auto av = a.data(), bv = b.data();
    if (auto ga = ctx.input_grads[0]; !ga.empty()) {
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += ctx.out_grad[i] * bv[i];
    }
    if (auto gb = ctx.input_grads[1]; !gb.empty()) {
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += ctx.out_grad[i] * av[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * factor;
  return record_op<T>("scale", out, {x}, [factor](const BackwardContext<T>& ctx) {
    auto gx = ctx.input_grads[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ctx.out_grad[i] * factor;
  });
}

template <typename T>
Tensor<T> mul_broadcast_rows(const Tensor<T>& x, const Tensor<T>& v) {
  require_rank("mul_broadcast_rows", x.shape(), 3);
  if (v.rank() != 2 || v.dim(0) != x.dim(0) || v.dim(1) != x.dim(2)) {
    shape_mismatch("mul_broadcast_rows", x.shape(), v.shape());
  }
  const std::size_t B = x.dim(0), l = x.dim(1), d = x.dim(2);
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data(), vv = v.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < l; ++i) {
      const std::size_t row = (b * l + i) * d;
      for (std::size_t c = 0; c < d; ++c) o[row + c] = xv[row + c] * vv[b * d + c];
    }
  }
  return record_op<T>("mul_broadcast_rows", out, {x, v}, [x, v, B, l, d](const BackwardContext<T>& ctx) {
    auto xv = x.data(), vv = v.data();
    auto gx = ctx.input_grads[0], gv = ctx.input_grads[1];
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t i = 0; i < l; ++i) {
        const std::size_t row = (b * l + i) * d;
        for (std::size_t c = 0; c < d; ++c) {
          const T g = ctx.out_grad[row + c];
          if (!gx.empty()) gx[row + c] += g * vv[b * d + c];
          if (!gv.empty()) gv[b * d + c] += g * xv[row + c];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> mul_constant(const Tensor<T>& x, const Tensor<T>& constant) {
  auto bc = broadcast_rows("mul_constant", x.shape(), constant.shape());
  const std::size_t last = x.shape().back();
  const std::size_t rows = bc.row_offset.size();
  std::vector<T> factors(x.numel());
  auto cv = constant.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < last; ++c) factors[r * last + c] = cv[bc.row_offset[r] + c * bc.last_stride];
  }
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * factors[i];
  return record_op<T>("mul_constant", out, {x},
                      [factors = std::move(factors)](const BackwardContext<T>& ctx) {
                        auto gx = ctx.input_grads[0];
                        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ctx.out_grad[i] * factors[i];
                      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  return record_op<T>("sum", Tensor<T>::scalar(s), {x}, [](const BackwardContext<T>& ctx) {
    const T g = ctx.out_grad[0];
    for (T& v : ctx.input_grads[0]) v += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const T n = static_cast<T>(x.numel());
  T s = 0;
  for (T v : x.data()) s += v;
  return record_op<T>("mean", Tensor<T>::scalar(s / n), {x}, [n](const BackwardContext<T>& ctx) {
    const T g = ctx.out_grad[0] / n;
    for (T& v : ctx.input_grads[0]) v += g;
  });
}

namespace {

template <typename T>
Tensor<T> softmax_impl(const Tensor<T>& x, const Tensor<T>* mask, SoftmaxStats* stats) {
  const std::size_t last = x.shape().back();
  const std::size_t rows = leading_rows(x.shape());
  RowBroadcast bc;
  if (mask) bc = broadcast_rows("softmax_lastdim", x.shape(), mask->shape());
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  std::size_t degenerate = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * last;
    T* orow = o.data() + r * last;
    const T* mr = mask ? mask->data().data() + bc.row_offset[r] : nullptr;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < last; ++c) {
      if (mr) {
        const T mv = mr[c * bc.last_stride];
        if (is_masked(mv)) continue;
        mx = std::max(mx, xr[c] + mv);
      } else {
        mx = std::max(mx, xr[c]);
      }
    }
    if (mx == -std::numeric_limits<T>::infinity()) {
      ++degenerate;
      std::fill(orow, orow + last, T(0));
      continue;
    }
    T denom = 0;
    for (std::size_t c = 0; c < last; ++c) {
      T z = xr[c];
      if (mr) {
        const T mv = mr[c * bc.last_stride];
        if (is_masked(mv)) {
          orow[c] = T(0);
          continue;
        }
        z += mv;
      }
      orow[c] = std::exp(z - mx);
      denom += orow[c];
    }
    const T inv = T(1) / denom;
    for (std::size_t c = 0; c < last; ++c) orow[c] *= inv;
  }
  if (stats) stats->degenerate_rows += degenerate;
  return record_op<T>("softmax_lastdim", out, {x}, [rows, last](const BackwardContext<T>& ctx) {
    auto gx = ctx.input_grads[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const T* p = ctx.out_value.data() + r * last;
      const T* g = ctx.out_grad.data() + r * last;
      T dot = 0;
      for (std::size_t c = 0; c < last; ++c) dot += p[c] * g[c];
      T* gr = gx.data() + r * last;
      for (std::size_t c = 0; c < last; ++c) gr[c] += p[c] * (g[c] - dot);
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  return softmax_impl<T>(x, nullptr, nullptr);
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x, const Tensor<T>& additive_mask, SoftmaxStats* stats) {
  return softmax_impl<T>(x, &additive_mask, stats);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (!(eps > T(0))) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t d = x.shape().back();
  if (gamma.rank() != 1 || gamma.dim(0) != d) shape_mismatch("layer_norm", x.shape(), gamma.shape());
  if (beta.rank() != 1 || beta.dim(0) != d) shape_mismatch("layer_norm", x.shape(), beta.shape());
  const std::size_t rows = leading_rows(x.shape());
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(rows);
  auto xv = x.data(), gv = gamma.data(), bv = beta.data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * d;
    T mu = 0;
    for (std::size_t c = 0; c < d; ++c) mu += xr[c];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (xr[c] - mu) * rs;
      xhat[r * d + c] = h;
      o[r * d + c] = gv[c] * h + bv[c];
    }
  }
  return record_op<T>(
      "layer_norm", out, {x, gamma, beta},
      [gamma, xhat = std::move(xhat), rstd = std::move(rstd), rows, d](const BackwardContext<T>& ctx) {
        auto gx = ctx.input_grads[0], ggamma = ctx.input_grads[1], gbeta = ctx.input_grads[2];
        auto gv = gamma.data();
        std::vector<T> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* g = ctx.out_grad.data() + r * d;
          const T* h = xhat.data() + r * d;
          if (!ggamma.empty()) {
            for (std::size_t c = 0; c < d; ++c) ggamma[c] += g[c] * h[c];
          }
          if (!gbeta.empty()) {
            for (std::size_t c = 0; c < d; ++c) gbeta[c] += g[c];
          }
          if (gx.empty()) continue;
          T m1 = 0, m2 = 0;
          for (std::size_t c = 0; c < d; ++c) {
            dxhat[c] = g[c] * gv[c];
            m1 += dxhat[c];
            m2 += dxhat[c] * h[c];
          }
          m1 /= static_cast<T>(d);
          m2 /= static_cast<T>(d);
          T* gr = gx.data() + r * d;
          for (std::size_t c = 0; c < d; ++c) gr[c] += rstd[r] * (dxhat[c] - m1 - h[c] * m2);
        }
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * kInvSqrt2));
  return record_op<T>("gelu", out, {x}, [x](const BackwardContext<T>& ctx) {
    auto gx = ctx.input_grads[0];
    auto xv = x.data();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const T v = xv[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
      const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
      gx[i] += ctx.out_grad[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> factors(x.numel());
  for (T& f : factors) f = rng.uniform() >= p ? keep_scale : T(0);
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * factors[i];
  return record_op<T>("dropout", out, {x}, [factors = std::move(factors)](const BackwardContext<T>& ctx) {
    auto gx = ctx.input_grads[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ctx.out_grad[i] * factors[i];
  });
}

template <typename T>
Tensor<T> max_pool1d(const Tensor<T>& x, std::size_t window, std::size_t stride,
                     std::span<const std::uint8_t> valid) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw ShapeError("max_pool1d: expected [l x d] or [B x l x d], got " + shape_str(x.shape()));
  }
  const std::size_t B = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t l = x.dim(x.rank() - 2), d = x.shape().back();
  if (window % 2 == 0) throw std::invalid_argument("max_pool1d: window must be odd");
  if (stride != 1) throw std::invalid_argument("max_pool1d: only stride 1 is supported");
  if (window > 2 * l - 1) {
    throw std::invalid_argument("max_pool1d: window " + std::to_string(window) +
                                " exceeds 2l-1 for l=" + std::to_string(l));
  }
  if (!valid.empty() && valid.size() != B * l) {
    throw ShapeError("max_pool1d: valid mask has " + std::to_string(valid.size()) +
                     " entries for shape " + shape_str(x.shape()));
  }
  const std::size_t half = window / 2;
  Tensor<T> out(x.shape());
  std::vector<std::int32_t> arg(x.numel(), -1);
  auto xv = x.data();
  auto o = out.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < l; ++j) {
      T* orow = o.data() + (b * l + j) * d;
      std::int32_t* arow = arg.data() + (b * l + j) * d;
      const std::size_t lo = j >= half ? j - half : 0;
      const std::size_t hi = std::min(l - 1, j + half);
      for (std::size_t i = lo; i <= hi; ++i) {
        if (!valid.empty() && !valid[b * l + i]) continue;
        const T* xr = xv.data() + (b * l + i) * d;
        const auto src = static_cast<std::int32_t>(b * l + i);
        for (std::size_t c = 0; c < d; ++c) {
          if (arow[c] < 0 || xr[c] > orow[c]) {
            orow[c] = xr[c];
            arow[c] = src;
          }
        }
      }
    }
  }
  return record_op<T>("max_pool1d", out, {x}, [arg = std::move(arg), d](const BackwardContext<T>& ctx) {
    auto gx = ctx.input_grads[0];
    for (std::size_t i = 0; i < arg.size(); ++i) {
      if (arg[i] >= 0) gx[static_cast<std::size_t>(arg[i]) * d + i % d] += ctx.out_grad[i];
    }
  });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  require_rank("embedding", table.shape(), 2);
  const std::size_t V = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw ShapeError("embedding: no ids");
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(V) + " rows");
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  Tensor<T> out({ids.size(), d});
  auto o = out.data();
  auto tv = table.data();
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(tv.data() + rows[i] * d, d, o.data() + i * d);
  return record_op<T>("embedding", out, {table}, [rows = std::move(rows), d](const BackwardContext<T>& ctx) {
    auto gt = ctx.input_grads[0];
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t c = 0; c < d; ++c) gt[rows[i] * d + c] += ctx.out_grad[i * d + c];
    }
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  const std::size_t d = x.shape().back();
  const std::size_t n = leading_rows(x.shape());
  if (rows.empty()) throw ShapeError("gather_rows: no rows selected");
  for (std::size_t r : rows) {
    if (r >= n) throw std::out_of_range("gather_rows: row " + std::to_string(r) + " of " + std::to_string(n));
  }
  Tensor<T> out({rows.size(), d});
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(xv.data() + rows[i] * d, d, o.data() + i * d);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return record_op<T>("gather_rows", out, {x}, [idx = std::move(idx), d](const BackwardContext<T>& ctx) {
    auto gx = ctx.input_grads[0];
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t c = 0; c < d; ++c) gx[idx[i] * d + c] += ctx.out_grad[i * d + c];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) shape_mismatch("reshape", x.shape(), shape);
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  return record_op<T>("reshape", out, {x}, [](const BackwardContext<T>& ctx) {
    auto gx = ctx.input_grads[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ctx.out_grad[i];
  });
}

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  require_rank("split_heads", x.shape(), 3);
  const std::size_t B = x.dim(0), l = x.dim(1), d = x.dim(2);
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("split_heads: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  Tensor<T> out({B, heads, l, dh});
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < l; ++i)
        std::copy_n(xv.data() + (b * l + i) * d + h * dh, dh, o.data() + ((b * heads + h) * l + i) * dh);
  return record_op<T>("split_heads", out, {x}, [B, heads, l, d, dh](const BackwardContext<T>& ctx) {
    auto gx = ctx.input_grads[0];
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < l; ++i) {
          const T* g = ctx.out_grad.data() + ((b * heads + h) * l + i) * dh;
          T* dst = gx.data() + (b * l + i) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) dst[c] += g[c];
        }
  });
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  require_rank("merge_heads", x.shape(), 4);
  const std::size_t B = x.dim(0), heads = x.dim(1), l = x.dim(2), dh = x.dim(3);
  const std::size_t d = heads * dh;
  Tensor<T> out({B, l, d});
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < l; ++i)
        std::copy_n(xv.data() + ((b * heads + h) * l + i) * dh, dh, o.data() + (b * l + i) * d + h * dh);
  return record_op<T>("merge_heads", out, {x}, [B, heads, l, d, dh](const BackwardContext<T>& ctx) {
    auto gx = ctx.input_grads[0];
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < l; ++i) {
          const T* g = ctx.out_grad.data() + (b * l + i) * d + h * dh;
          T* dst = gx.data() + ((b * heads + h) * l + i) * dh;
          for (std::size_t c = 0; c < dh; ++c) dst[c] += g[c];
        }
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b, T alpha) {
  if (a.rank() < 2 || a.rank() != b.rank()) shape_mismatch("bmm", a.shape(), b.shape());
  const std::size_t r = a.rank();
  for (std::size_t i = 0; i + 2 < r; ++i) {
    if (a.dim(i) != b.dim(i)) shape_mismatch("bmm", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(r - 2), k = a.dim(r - 1);
  const std::size_t bk = transpose_b ? b.dim(r - 1) : b.dim(r - 2);
  const std::size_t n = transpose_b ? b.dim(r - 2) : b.dim(r - 1);
  if (bk != k) shape_mismatch("bmm", a.shape(), b.shape());
  const std::size_t batch = a.numel() / (m * k);
  Shape out_shape = a.shape();
  out_shape[r - 1] = n;
  Tensor<T> out(out_shape);
  auto av = a.data(), bv = b.data();
  auto o = out.data();
  for (std::size_t s = 0; s < batch; ++s) {
    auto am = as_matrix(av.subspan(s * m * k, m * k), m, k);
    auto om = as_matrix(o.subspan(s * m * n, m * n), m, n);
    if (transpose_b) {
      om.noalias() = alpha * (am * as_matrix(bv.subspan(s * n * k, n * k), n, k).transpose());
    } else {
      om.noalias() = alpha * (am * as_matrix(bv.subspan(s * k * n, k * n), k, n));
    }
  }
  return record_op<T>("bmm", out, {a, b}, [a, b, batch, m, k, n, transpose_b, alpha](const BackwardContext<T>& ctx) {
    auto av = a.data(), bv = b.data();
    auto ga = ctx.input_grads[0], gb = ctx.input_grads[1];
    for (std::size_t s = 0; s < batch; ++s) {
      auto g = as_matrix(ctx.out_grad.subspan(s * m * n, m * n), m, n);
      auto am = as_matrix(av.subspan(s * m * k, m * k), m, k);
      if (transpose_b) {
        auto bm = as_matrix(bv.subspan(s * n * k, n * k), n, k);
        if (!ga.empty()) as_matrix(ga.subspan(s * m * k, m * k), m, k).noalias() += alpha * (g * bm);
        if (!gb.empty()) as_matrix(gb.subspan(s * n * k, n * k), n, k).noalias() += alpha * (g.transpose() * am);
      } else {
        auto bm = as_matrix(bv.subspan(s * k * n, k * n), k, n);
        if (!ga.empty()) as_matrix(ga.subspan(s * m * k, m * k), m, k).noalias() += alpha * (g * bm.transpose());
        if (!gb.empty()) as_matrix(gb.subspan(s * k * n, k * n), k, n).noalias() += alpha * (am.transpose() * g);
      }
    }
  });
}

template <typename T>
Tensor<T> masked_mean_rows(const Tensor<T>& x, std::span<const std::uint8_t> valid) {
  require_rank("masked_mean_rows", x.shape(), 3);
  const std::size_t B = x.dim(0), l = x.dim(1), d = x.dim(2);
  if (!valid.empty() && valid.size() != B * l) {
    throw ShapeError("masked_mean_rows: valid mask has " + std::to_string(valid.size()) +
                     " entries for shape " + shape_str(x.shape()));
  }
  std::vector<T> inv_count(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < l; ++i) cnt += valid.empty() || valid[b * l + i] ? 1 : 0;
    if (cnt == 0) throw std::invalid_argument("masked_mean_rows: every position is padded");
    inv_count[b] = T(1) / static_cast<T>(cnt);
  }
  Tensor<T> out({B, d});
  auto o = out.data();
  auto xv = x.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < l; ++i) {
      if (!valid.empty() && !valid[b * l + i]) continue;
      for (std::size_t c = 0; c < d; ++c) o[b * d + c] += xv[(b * l + i) * d + c];
    }
    for (std::size_t c = 0; c < d; ++c) o[b * d + c] *= inv_count[b];
  }
  Mask keep(valid.begin(), valid.end());
  return record_op<T>("masked_mean_rows", out, {x},
                      [keep = std::move(keep), inv_count = std::move(inv_count), B, l, d](
                          const BackwardContext<T>& ctx) {
                        auto gx = ctx.input_grads[0];
                        for (std::size_t b = 0; b < B; ++b)
                          for (std::size_t i = 0; i < l; ++i) {
                            if (!keep.empty() && !keep[b * l + i]) continue;
                            for (std::size_t c = 0; c < d; ++c)
                              gx[(b * l + i) * d + c] += ctx.out_grad[b * d + c] * inv_count[b];
                          }
                      });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels) {
  require_rank("cross_entropy", logits.shape(), 2);
  const std::size_t n = logits.dim(0), C = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_str(logits.shape()));
  }
  std::size_t counted = 0;
  for (std::int32_t y : labels) {
    if (y == kIgnoreLabel) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= C) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside " +
                              std::to_string(C) + " classes");
    }
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("cross_entropy: no labelled positions");
  auto lv = logits.data();
  std::vector<T> probs(n * C, T(0));
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == kIgnoreLabel) continue;
    const T* z = lv.data() + i * C;
    T mx = *std::max_element(z, z + C);
    T denom = 0;
    for (std::size_t c = 0; c < C; ++c) denom += std::exp(z[c] - mx);
    const T lse = mx + std::log(denom);
    total += lse - z[labels[i]];
    for (std::size_t c = 0; c < C; ++c) probs[i * C + c] = std::exp(z[c] - lse);
  }
  const T inv = T(1) / static_cast<T>(counted);
  std::vector<std::int32_t> y(labels.begin(), labels.end());
  return record_op<T>("cross_entropy", Tensor<T>::scalar(total * inv), {logits},
                      [probs = std::move(probs), y = std::move(y), n, C, inv](const BackwardContext<T>& ctx) {
                        auto gl = ctx.input_grads[0];
                        const T g = ctx.out_grad[0] * inv;
                        for (std::size_t i = 0; i < n; ++i) {
                          if (y[i] == kIgnoreLabel) continue;
                          for (std::size_t c = 0; c < C; ++c) gl[i * C + c] += g * probs[i * C + c];
                          gl[i * C + static_cast<std::size_t>(y[i])] -= g;
                        }
                      });
}

#define HYBRIDBERT_INSTANTIATE(T)                                                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> matmul_bt(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> linear_bt(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> scale(const Tensor<T>&, T);                                                    \
  template Tensor<T> mul_broadcast_rows(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> mul_constant(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> sum(const Tensor<T>&);                                                         \
  template Tensor<T> mean(const Tensor<T>&);                                                        \
  template Tensor<T> softmax_lastdim(const Tensor<T>&);                                             \
  template Tensor<T> softmax_lastdim(const Tensor<T>&, const Tensor<T>&, SoftmaxStats*);            \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);           \
  template Tensor<T> gelu(const Tensor<T>&);                                                        \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&);                                       \
  template Tensor<T> max_pool1d(const Tensor<T>&, std::size_t, std::size_t,                         \
                                std::span<const std::uint8_t>);                                     \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const std::int32_t>);                    \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                   \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                              \
  template Tensor<T> split_heads(const Tensor<T>&, std::size_t);                                    \
  template Tensor<T> merge_heads(const Tensor<T>&);                                                 \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool, T);                              \
  template Tensor<T> masked_mean_rows(const Tensor<T>&, std::span<const std::uint8_t>);             \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>);

HYBRIDBERT_INSTANTIATE(float)
HYBRIDBERT_INSTANTIATE(double)

#undef HYBRIDBERT_INSTANTIATE

}  // namespace hybridbert
