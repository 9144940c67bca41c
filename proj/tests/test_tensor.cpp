// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "hybridbert/errors.hpp"
#include "hybridbert/ops.hpp"

using namespace hybridbert;

TEST(Tensor, ConstructionValidatesShape) {
  EXPECT_THROW(Tensor<float>(Shape{}), ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{2, 0}), ShapeError);
  EXPECT_THROW(Tensor<double>(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  Tensor<double> t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_DOUBLE_EQ(t.data()[5], 1.5);
  EXPECT_THROW(t.item(), ShapeError);
  EXPECT_DOUBLE_EQ(Tensor<double>::scalar(4.0).item(), 4.0);
}

TEST(Tensor, HandlesShareStorage) {
  Tensor<float> a({3}, 0.f);
  Tensor<float> b = a;
  b.data()[1] = 7.f;
  EXPECT_EQ(a.data()[1], 7.f);
  EXPECT_TRUE(a.same_node(b));
  Tensor<float> c = a.detach();
  c.data()[1] = 1.f;
  EXPECT_EQ(a.data()[1], 7.f);
}

TEST(Tape, NothingIsRecordedWithoutActiveTape) {
  Tensor<double> x({2}, 1.0);
  x.set_requires_grad(true);
  auto y = add(x, x);
  EXPECT_TRUE(y.is_leaf());
  EXPECT_THROW(backward(sum(y)), std::logic_error);
}

TEST(Tape, RecordsOnlyOpsTouchingGradInputs) {
  Tape<double> tape;
  TapeScope<double> scope(tape);
  Tensor<double> a({2}, 1.0), b({2}, 2.0);
  auto c = add(a, b);
  EXPECT_EQ(tape.size(), 0u);
  a.set_requires_grad(true);
  auto d = mul(a, b);
  EXPECT_EQ(tape.size(), 1u);
  EXPECT_FALSE(d.is_leaf());
  EXPECT_THROW(d.set_requires_grad(false), std::logic_error);
}

TEST(Tape, BackwardComputesGradientsOnce) {
  Tensor<double> x({3}, std::vector<double>{1, 2, 3});
  x.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> scope(tape);
    loss = sum(mul(x, x));
  }
  tape.backward(loss);
  ASSERT_TRUE(x.has_grad());
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 6.0);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.backward(loss), std::logic_error);
}

TEST(Tape, RejectsNonScalarLossAndStaleGradients) {
  Tensor<double> x({2}, 1.0);
  x.set_requires_grad(true);
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto y = scale(x, 2.0);
    EXPECT_THROW(tape.backward(y), ShapeError);
    backward(sum(y));
  }
  Tape<double> second;
  TapeScope<double> scope(second);
  auto loss = sum(scale(x, 3.0));
  EXPECT_THROW(second.backward(loss), std::logic_error);
  x.zero_grad();
  Tape<double> third;
  TapeScope<double> scope3(third);
  auto loss3 = sum(scale(x, 3.0));
  third.backward(loss3);
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
}

TEST(Tape, GradientsAccumulateAcrossUses) {
  Tensor<double> x({1}, 2.0);
  x.set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto loss = sum(add(mul(x, x), scale(x, 5.0)));
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 2.0 + 5.0);
}

TEST(Tape, UnusedInputsGetNoGradient) {
  Tensor<double> x({2}, 1.0), unused({2}, 1.0);
  x.set_requires_grad(true);
  unused.set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  tape.backward(sum(x));
  EXPECT_TRUE(x.has_grad());
  EXPECT_FALSE(unused.has_grad());
}

TEST(Tape, NoGradScopeSuspendsRecording) {
  Tensor<double> x({2}, 1.0);
  x.set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  {
    NoGradScope<double> off;
    EXPECT_EQ(active_tape<double>(), nullptr);
    auto y = add(x, x);
    EXPECT_TRUE(y.is_leaf());
  }
  EXPECT_EQ(active_tape<double>(), &tape);
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Tape, TapesArePerDtype) {
  Tape<double> tape;
  TapeScope<double> scope(tape);
  EXPECT_EQ(active_tape<float>(), nullptr);
}

TEST(Tape, RecordedElementsCountsOutputs) {
  Tensor<double> x({4, 3}, 1.0);
  x.set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto y = scale(x, 2.0);
  auto z = sum(y);
  EXPECT_EQ(tape.recorded_elements(), 12u + 1u);
  EXPECT_EQ(tape.largest_recorded(), 12u);
  ASSERT_EQ(tape.op_names().size(), 2u);
  EXPECT_EQ(tape.op_names()[0], "scale");
  (void)z;
}
