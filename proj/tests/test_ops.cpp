// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "hybridbert/errors.hpp"
#include "hybridbert/gradient_suite.hpp"
#include "hybridbert/ops.hpp"
#include "oracles.hpp"

using namespace hybridbert;
using oracle::max_abs_diff;
using oracle::random_tensor;
using oracle::values;

namespace {

constexpr double kOracleTol = 1e-10;

}  // namespace

TEST(Ops, MatmulMatchesScalarLoops) {
  Rng rng(1);
  auto a = random_tensor({7, 13}, rng), b = random_tensor({13, 5}, rng);
  EXPECT_LT(max_abs_diff(values(matmul(a, b)), oracle::matmul(values(a), values(b), 7, 13, 5)), kOracleTol);
  auto bt = random_tensor({5, 13}, rng);
  oracle::Mat bt_t(13 * 5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 13; ++j) bt_t[j * 5 + i] = bt.data()[i * 13 + j];
  EXPECT_LT(max_abs_diff(values(matmul_bt(a, bt)), oracle::matmul(values(a), bt_t, 7, 13, 5)), kOracleTol);
}

TEST(Ops, LinearMatchesScalarLoops) {
  Rng rng(2);
  auto x = random_tensor({2, 6, 9}, rng), w = random_tensor({9, 4}, rng), b = random_tensor({4}, rng);
  EXPECT_LT(max_abs_diff(values(linear(x, w, b)), oracle::linear(values(x), values(w), values(b), 12, 9, 4)), kOracleTol);
  EXPECT_EQ(linear(x, w, b).shape(), (Shape{2, 6, 4}));
  EXPECT_THROW(linear(x, random_tensor({8, 4}, rng), b), ShapeError);
}

TEST(Ops, LayerNormMatchesScalarLoops) {
  Rng rng(3);
  auto x = random_tensor({16, 32}, rng, 3.0), g = random_tensor({32}, rng), b = random_tensor({32}, rng);
  EXPECT_LT(max_abs_diff(values(layer_norm(x, g, b, 1e-12)),
                         oracle::layer_norm(values(x), values(g), values(b), 16, 32, 1e-12)),
            kOracleTol);
  EXPECT_THROW(layer_norm(x, g, b, 0.0), std::invalid_argument);
}

TEST(Ops, LayerNormOfConstantRowIsBeta) {
  Tensor<double> x({2, 4}, 3.0), g({4}, 1.0);
  Tensor<double> b({4}, std::vector<double>{1, 2, 3, 4});
  auto y = layer_norm(x, g, b, 1e-12);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(y.data()[i], b.data()[i % 4]);
}

TEST(Ops, SoftmaxRowsSumToOneAndMaskedEntriesAreZero) {
  Rng rng(4);
  auto x = random_tensor({2, 3, 6}, rng, 5.0);
  Tensor<double> mask({2, 1, 6});
  mask.data()[2] = dtype_traits<double>::mask_value;
  mask.data()[6 + 5] = dtype_traits<double>::mask_value;
  SoftmaxStats stats;
  auto p = softmax_lastdim(x, mask, &stats);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 6; ++c) s += p.data()[r * 6 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
    if (r < 3) EXPECT_EQ(p.data()[r * 6 + 2], 0.0);
    else EXPECT_EQ(p.data()[r * 6 + 5], 0.0);
  }
  EXPECT_EQ(stats.degenerate_rows, 0u);
}

TEST(Ops, SoftmaxFullyMaskedRowIsZeroAndCounted) {
  Tensor<float> x({1, 3}, std::vector<float>{1, 2, 3});
  Tensor<float> mask({1, 3}, dtype_traits<float>::mask_value);
  SoftmaxStats stats;
  auto p = softmax_lastdim(x, mask, &stats);
  for (float v : p.data()) EXPECT_EQ(v, 0.f);
  EXPECT_EQ(stats.degenerate_rows, 1u);
}

TEST(Ops, SoftmaxIsShiftInvariantAndStableForLargeLogits) {
  Tensor<float> x({1, 3}, std::vector<float>{1000.f, 1001.f, 1002.f});
  Tensor<float> y({1, 3}, std::vector<float>{0.f, 1.f, 2.f});
  auto px = softmax_lastdim(x), py = softmax_lastdim(y);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(px.data()[i], py.data()[i], 1e-7);
}

TEST(Ops, GeluMatchesErfForm) {
  Tensor<double> x({5}, std::vector<double>{-3, -1, 0, 0.5, 4});
  auto y = gelu(x);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(y.data()[i], oracle::gelu(x.data()[i]), 1e-15);
}

TEST(Ops, CrossEntropyMatchesLogSoftmaxOracle) {
  Rng rng(5);
  auto logits = random_tensor({6, 9}, rng, 2.0);
  std::vector<std::int32_t> labels = {3, kIgnoreLabel, 0, 8, kIgnoreLabel, 4};
  EXPECT_NEAR(cross_entropy(logits, labels).item(), oracle::cross_entropy(values(logits), labels, 9), kOracleTol);
}

TEST(Ops, CrossEntropyOfUniformLogitsIsLogClasses) {
  Tensor<double> logits({3, 7}, 0.25);
  std::vector<std::int32_t> labels = {1, 6, 0};
  EXPECT_NEAR(cross_entropy(logits, labels).item(), std::log(7.0), 1e-14);
}

TEST(Ops, CrossEntropyRejectsBadLabels) {
  Tensor<double> logits({2, 3}, 0.0);
  std::vector<std::int32_t> none = {kIgnoreLabel, kIgnoreLabel};
  std::vector<std::int32_t> out_of_range = {0, 3};
  EXPECT_THROW(cross_entropy(logits, none), std::invalid_argument);
  EXPECT_THROW(cross_entropy(logits, out_of_range), std::out_of_range);
}

TEST(Ops, MaxPoolHandComputedColumn) {
  Tensor<double> x({4, 1}, std::vector<double>{1, 5, 2, 4});
  auto y = max_pool1d(x, 3, 1);
  EXPECT_EQ(values(y), (oracle::Mat{5, 5, 5, 4}));
}

TEST(Ops, MaxPoolSkipsInvalidRows) {
  Rng rng(6);
  auto x = random_tensor({2, 7, 5}, rng);
  Mask valid(14, 1);
  valid[5] = valid[6] = valid[13] = 0;
  std::vector<int> padded(7);
  const auto xv = values(x);
  const auto out = values(max_pool1d(x, 3, 1, valid));
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 0; i < 7; ++i) padded[i] = valid[b * 7 + i] ? 0 : 1;
    oracle::Mat xb(xv.begin() + static_cast<long>(b * 35), xv.begin() + static_cast<long>((b + 1) * 35));
    oracle::Mat ob(out.begin() + static_cast<long>(b * 35), out.begin() + static_cast<long>((b + 1) * 35));
    EXPECT_LT(max_abs_diff(ob, oracle::window_max(xb, 7, 5, 3, padded)), kOracleTol);
  }
}

TEST(Ops, MaxPoolRejectsBadWindows) {
  Tensor<double> x({4, 2}, 0.0);
  EXPECT_THROW(max_pool1d(x, 2, 1), std::invalid_argument);
  EXPECT_THROW(max_pool1d(x, 3, 2), std::invalid_argument);
}

TEST(Ops, EmbeddingRejectsOutOfRangeIds) {
  Tensor<double> table({4, 2}, 0.0);
  std::vector<std::int32_t> ids = {0, 4};
  EXPECT_THROW(embedding(table, ids), std::out_of_range);
  std::vector<std::int32_t> neg = {-1};
  EXPECT_THROW(embedding(table, neg), std::out_of_range);
}

TEST(Ops, SplitMergeHeadsRoundTrip) {
  Rng rng(7);
  auto x = random_tensor({2, 5, 12}, rng);
  auto split = split_heads(x, 3);
  EXPECT_EQ(split.shape(), (Shape{2, 3, 5, 4}));
  EXPECT_EQ(values(merge_heads(split)), values(x));
  EXPECT_THROW(split_heads(x, 5), ShapeError);
}

TEST(Ops, MaskedMeanRowsIgnoresInvalidRows) {
  Tensor<double> x({1, 3, 2}, std::vector<double>{1, 2, 100, 100, 3, 4});
  Mask valid = {1, 0, 1};
  EXPECT_EQ(values(masked_mean_rows(x, valid)), (oracle::Mat{2, 3}));
  Mask none = {0, 0, 0};
  EXPECT_THROW(masked_mean_rows(x, none), std::invalid_argument);
}

TEST(Ops, DropoutZeroIsIdentityAndScalesSurvivors) {
  Rng rng(8);
  auto x = random_tensor({50, 40}, rng);
  EXPECT_TRUE(dropout(x, 0.0, rng).same_node(x));
  auto y = dropout(x, 0.25, rng);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (y.data()[i] == 0.0) continue;
    ++kept;
    EXPECT_NEAR(y.data()[i], x.data()[i] / 0.75, 1e-12);
  }
  EXPECT_NEAR(static_cast<double>(kept) / 2000.0, 0.75, 0.04);
  EXPECT_THROW(dropout(x, 1.0, rng), std::invalid_argument);
}

TEST(Ops, ShapeMismatchesAreReported) {
  Tensor<double> a({2, 3}, 0.0), b({3, 2}, 0.0);
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(mul(a, b), ShapeError);
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(OpGradientSuite, CoversEveryOp) {
  const auto cases = op_gradient_cases();
  EXPECT_GE(cases.size(), 30u);
  for (const auto& c : cases) {
    SCOPED_TRACE(c.name);
    EXPECT_GT(c.result.coordinates, 0u);
    EXPECT_LT(c.result.max_rel_error, 1e-5) << "analytic " << c.result.worst_analytic << " numeric "
                                            << c.result.worst_numeric;
  }
}

TEST(GradCheck, DetectsAWrongGradient) {
  // x * stop_gradient(x): the tape sees only one factor, so d/dx is off by x.
  Tensor<double> x({3}, std::vector<double>{0.5, -1.0, 2.0});
  auto result = grad_check(
      [](const std::vector<Tensor<double>>& in) { return sum(mul_constant(in[0], in[0].detach())); }, {x});
  EXPECT_GT(result.max_rel_error, 0.1);
}
