// tests/quantizer_test.cc

// Copyright 2026 The CSP-Sep Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "csp/ops.h"
#include "csp/quantizer.h"
#include "test_util.h"

namespace csp {
namespace {

using testing::CheckGradients;
using testing::RandomMat;

QuantizerConfig Toy(int groups, int entries, int cw, int in, int out) {
  QuantizerConfig c;
  c.groups = groups;
  c.entries = entries;
  c.codeword_dim = cw;
  c.in_dim = in;
  c.out_dim = out;
  return c;
}

TEST(DiversityLossTest, Extremes) {
  EXPECT_NEAR(DiversityLossValue(Mat::Constant(2, 4, 0.25)), 0.0, 1e-12);
  Mat one_hot = Mat::Zero(2, 4);
  one_hot(0, 1) = one_hot(1, 3) = 1.0;
  EXPECT_NEAR(DiversityLossValue(one_hot), 1.0, 1e-12);
}

TEST(DiversityLossTest, HandComputedEntropy) {
  Mat p(1, 2);
  p << 0.9, 0.1;
  const double h = -(0.9 * std::log(0.9) + 0.1 * std::log(0.1));
  EXPECT_NEAR(h, 0.32508, 1e-5);
  EXPECT_NEAR(DiversityLossValue(p), 1.0 - h / std::log(2.0), 1e-12);
  EXPECT_NEAR(DiversityLossValue(p), 0.53100, 1e-4);
}

TEST(DiversityLossTest, PermutationInvariantAndRejectsNegative) {
  Mat p(2, 3);
  p << 0.2, 0.5, 0.3, 0.6, 0.3, 0.1;
  Mat q(2, 3);
  q << 0.3, 0.2, 0.5, 0.1, 0.6, 0.3;
  EXPECT_NEAR(DiversityLossValue(p), DiversityLossValue(q), 1e-14);
  Mat bad = p;
  bad(0, 0) = -0.1;
  bad(0, 1) = 0.8;
  EXPECT_THROW(DiversityLossValue(bad), std::invalid_argument);
}

TEST(DiversityLossTest, Gradients) {
  Var logits(RandomMat(5, 2 * 4, 1), true);
  auto f = [&] {
    Var avg(Mat::Constant(1, 5, 0.2));
    Var p0 = MatMul(avg, SoftmaxRows(SliceCols(logits, 0, 4)));
    Var p1 = MatMul(avg, SoftmaxRows(SliceCols(logits, 4, 4)));
    return DiversityLoss(ConcatRows({p0, p1}));
  };
  EXPECT_LT(CheckGradients(f, {logits}).max_rel_error, 1e-4);
}

TEST(AnnealTest, Schedule) {
  EXPECT_DOUBLE_EQ(AnnealTemperature(0), 2.0);
  EXPECT_DOUBLE_EQ(AnnealTemperature(10000000), 0.5);
  EXPECT_NEAR(std::log(2.0) / -std::log(0.999995), 138629.09, 0.01);
  EXPECT_NEAR(AnnealTemperature(138630), 1.0, 1e-3);
  double prev = AnnealTemperature(0);
  for (int64_t s = 1000; s < 600000; s += 1000) {
    const double t = AnnealTemperature(s);
    EXPECT_LE(t, prev);
    prev = t;
  }
  EXPECT_THROW(AnnealTemperature(-1), std::invalid_argument);
}

TEST(GumbelQuantizerTest, EvalTokensAreCodewordCombinations) {
  ParamStore store;
  Rng rng(2);
  GumbelQuantizer q(store, "q", Toy(2, 3, 4, 5, 6), rng);
  Mat x = RandomMat(7, 5, 3);
  QuantizeResult r = q.Quantize(Var(x), 1.0, false, nullptr);
  ASSERT_EQ(r.tokens.rows(), 7);
  for (Eigen::Index t = 0; t < 7; ++t) {
    double best = 1e300;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        best = std::min(best, (r.tokens.value().row(t) - q.Codeword({a, b})).norm());
    EXPECT_LT(best, 1e-12);
    EXPECT_LT((r.tokens.value().row(t) - q.Codeword(r.indices[t])).norm(), 1e-12);
  }
  for (Eigen::Index g = 0; g < 2; ++g) EXPECT_NEAR(r.probs.value().row(g).sum(), 1.0, 1e-12);
  EXPECT_THROW(q.Quantize(Var(x), 0.0, false, nullptr), std::invalid_argument);
}

TEST(GumbelQuantizerTest, TrainModeSeededAndStraightThrough) {
  ParamStore store;
  Rng rng(4);
  GumbelQuantizer q(store, "q", Toy(2, 2, 2, 3, 2), rng);
  Mat x = RandomMat(6, 3, 5);
  Rng r1(9), r2(9);
  auto a = q.Quantize(Var(x), 1.0, true, &r1);
  auto b = q.Quantize(Var(x), 1.0, true, &r2);
  EXPECT_EQ(a.indices, b.indices);
  EXPECT_EQ(a.tokens.value(), b.tokens.value());
  for (Eigen::Index t = 0; t < 6; ++t)
    EXPECT_LT((a.tokens.value().row(t) - q.Codeword(a.indices[t])).norm(), 1e-12);

  // Nonzero gradient at the logits even though the forward value is hard.
  Var logits(RandomMat(6, 4, 6), true);
  Rng r3(11);
  auto c = q.QuantizeLogits(logits, 1.0, true, &r3);
  Backward(Sum(Mul(c.tokens, Var(RandomMat(6, 2, 7)))));
  EXPECT_GT(logits.grad().cwiseAbs().maxCoeff(), 0.0);
}

TEST(GumbelQuantizerTest, LowTemperatureConcentrates) {
  ParamStore store;
  Rng rng(8);
  GumbelQuantizer q(store, "q", Toy(1, 4, 2, 3, 2), rng);
  Mat x = RandomMat(50, 3, 9);
  // With tau near 0 the soft relaxation is already one-hot, so the straight
  // through estimator and the soft sample coincide.
  Var logits(q.input_proj().Forward(Var(x)).value(), true);
  Rng r(3);
  Mat noise = SampleGumbel(50, 4, r);
  Mat soft = SoftmaxRows(Scale(Add(logits, Var(noise)), 1.0 / 1e-4)).value();
  for (Eigen::Index t = 0; t < 50; ++t) EXPECT_GT(soft.row(t).maxCoeff(), 1.0 - 1e-6);
}

}  // namespace
}  // namespace csp
