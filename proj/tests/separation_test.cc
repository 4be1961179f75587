// tests/separation_test.cc

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

#include <algorithm>
#include <map>
#include <numeric>

#include "csp/config.h"
#include "csp/separation.h"
#include "test_util.h"

namespace csp {
namespace {

using testing::RandomMat;
using testing::TempDir;
using testing::TinyConfig;

SeparatorConfig SmallSep(bool frontend) {
  SeparatorConfig c;
  c.enc_dim = 16;
  c.bottleneck = 8;
  c.hidden = 16;
  c.blocks = 3;
  c.repeats = 1;
  c.use_frontend = frontend;
  return c;
}

TEST(AdapterIndexTest, RateRatioReplication) {
  const auto idx = AdapterIndex(0, 1000, 20, 50);
  std::map<int, int> counts;
  for (int k : idx) ++counts[k];
  EXPECT_EQ(counts[-1], 19);
  for (int k = 0; k < 49; ++k) EXPECT_EQ(counts[k], 20) << k;
  EXPECT_EQ(counts[49], 1);
  // Pattern k is used by no frame earlier than 20k.
  for (int t = 0; t < 1000; ++t) EXPECT_LE(20 * std::max(idx[t], 0), t);
  EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
  // Offsets agree with the whole-sequence map.
  const auto tail = AdapterIndex(400, 600, 20, 50);
  EXPECT_TRUE(std::equal(tail.begin(), tail.end(), idx.begin() + 400));
}

TEST(AdapterIndexTest, SinglePatternIsConstant) {
  const auto idx = AdapterIndex(0, 100, 20, 1);
  for (int t = 19; t < 100; ++t) EXPECT_EQ(idx[t], 0);
  for (int t = 0; t < 19; ++t) EXPECT_EQ(idx[t], -1);
}

TEST(SeparatorConfigTest, Validation) {
  SeparatorConfig c;
  EXPECT_NO_THROW(c.Validate());
  c.enc_kernel = 8;
  EXPECT_THROW(c.Validate(), std::invalid_argument);
  c = SeparatorConfig();
  c.speakers = 1;
  EXPECT_THROW(c.Validate(), std::invalid_argument);
  c = SeparatorConfig();
  c.causal = false;
  EXPECT_THROW(c.Validate(), std::invalid_argument);
  EXPECT_THROW(Separator(SmallSep(true), 8, 100, 1), std::invalid_argument);
}

TEST(SeparatorTest, EncoderShapeCausalityAndZero) {
  Separator sep(SmallSep(false), 0, 0, 1);
  Var x(RandomMat(16000, 1, 2, 0.1));
  Mat e = sep.Encode(x).value();
  EXPECT_EQ(e.rows(), 1000);
  EXPECT_EQ(e.cols(), 16);
  EXPECT_GE(e.minCoeff(), 0.0);
  Mat y = x.value();
  y.bottomRows(16000 - 4000).array() += 1.0;
  Mat f = sep.Encode(Var(y)).value();
  // Frame t reads samples up to 16t + 15.
  EXPECT_EQ(e.topRows(250), f.topRows(250));
  EXPECT_NE(e.row(250), f.row(250));
  EXPECT_EQ(sep.Encode(Var(Mat::Zero(320, 1))).value().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(sep.Encode(Var(Mat::Zero(31, 1))), std::invalid_argument);
}

TEST(SeparatorTest, AdaptRepeatsProjectedPatterns) {
  Separator sep(SmallSep(true), 8, 320, 3);
  Mat pat = RandomMat(5, 8, 4);
  Mat out = sep.Adapt(Var(pat), 100).value();
  ASSERT_EQ(out.rows(), 100);
  const Mat& w = sep.params().Get("sep.adapter.weight").value();
  const Mat& b = sep.params().Get("sep.adapter.bias").value();
  for (int t = 0; t < 100; ++t) {
    const int k = std::min((t + 1) / 20 - 1, 4);
    RowVec want = k < 0 ? RowVec(RowVec::Zero(16)) : RowVec(pat.row(k) * w.transpose() + b);
    EXPECT_LT((out.row(t) - want).norm(), 1e-12) << t;
  }
  // Perturbing pattern k touches only frames >= 20k.
  for (int k = 0; k < 5; ++k) {
    Mat p2 = pat;
    p2.row(k).array() += 1.0;
    Mat o2 = sep.Adapt(Var(p2), 100).value();
    for (int t = 0; t < 20 * k; ++t) EXPECT_EQ(out.row(t), o2.row(t));
  }
}

TEST(SeparatorTest, MasksBoundedAndZeroFusionIsBaseline) {
  Separator sep(SmallSep(true), 8, 320, 5);
  Var enc = sep.Encode(Var(RandomMat(3200, 1, 6, 0.5)));
  auto masks = sep.Masks(enc, Var(Mat::Zero(enc.rows(), enc.cols())));
  auto plain = sep.Masks(enc, Var());
  ASSERT_EQ(masks.size(), 2u);
  for (size_t s = 0; s < 2; ++s) {
    EXPECT_GE(masks[s].value().minCoeff(), 0.0);
    EXPECT_LE(masks[s].value().maxCoeff(), 1.0);
    EXPECT_EQ(masks[s].value(), plain[s].value());
  }
  EXPECT_THROW(sep.Masks(enc, Var(Mat::Zero(enc.rows() - 1, enc.cols()))), std::invalid_argument);
}

TEST(SeparatorTest, ReconstructMatchesOverlapAddOracle) {
  Separator sep(SmallSep(false), 0, 0, 7);
  Var mix(RandomMat(1000, 1, 8, 0.3));
  Var enc = sep.Encode(mix);
  Mat mask = (RandomMat(enc.rows(), enc.cols(), 9).array() * 0.5 + 0.5).matrix();
  Mat out = sep.Reconstruct(enc, Var(mask), mix.rows()).value();
  ASSERT_EQ(out.rows(), 1000);
  const Mat& w = sep.params().Get("sep.decoder.weight").value();  // kernel x enc_dim
  Mat oracle = Mat::Zero(1000, 1);
  for (Eigen::Index t = 0; t < enc.rows(); ++t)
    for (int j = 0; j < 32; ++j) {
      const Eigen::Index n = 16 * t + j;
      if (n >= 1000) continue;
      double v = 0.0;
      for (int c = 0; c < 16; ++c) v += w(j, c) * mask(t, c) * enc.value()(t, c);
      oracle(n, 0) += v;
    }
  EXPECT_LT((out - oracle).cwiseAbs().maxCoeff(), 1e-12);
  Mat zero = sep.Reconstruct(enc, Var(Mat::Zero(enc.rows(), enc.cols())), 1000).value();
  EXPECT_EQ(zero.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(sep.Reconstruct(enc, Var(mask), 1003).rows(), 1003);
  EXPECT_THROW(sep.Reconstruct(enc, Var(Mat::Ones(2, 16)), 1000), std::invalid_argument);
}

TEST(SeparatorTest, IdentityToyRecoversInput) {
  SeparatorConfig c = SmallSep(false);
  c.enc_dim = 32;
  Separator sep(c, 0, 0, 10);
  sep.params().Get("sep.encoder.weight").mutable_value() = Mat::Identity(32, 32);
  sep.params().Get("sep.decoder.weight").mutable_value() = Mat::Identity(32, 32);
  Mat x = RandomMat(640, 1, 11).cwiseAbs();
  Var enc = sep.Encode(Var(x));
  Mat out = sep.Reconstruct(enc, Var(Mat::Ones(enc.rows(), 32)), 640).value();
  // Two frames cover each sample; the causal encoder places the output one
  // stride after its input.
  for (int n = 16; n < 640; ++n) EXPECT_NEAR(out(n, 0), 2.0 * x(n - 16, 0), 1e-12) << n;
}

// Independent SI-SDR for the permutation oracle.
double OracleSiSdr(const Mat& est, const Mat& ref) {
  Eigen::VectorXd e = est.col(0).array() - est.mean(), r = ref.col(0).array() - ref.mean();
  const double a = e.dot(r) / r.squaredNorm();
  const double sdr = 10.0 * std::log10((a * r).squaredNorm() / (e - a * r).squaredNorm());
  return std::clamp(sdr, -60.0, 60.0);
}

TEST(PitTest, PerfectAndSwapped) {
  std::vector<Mat> refs = {RandomMat(400, 1, 12), RandomMat(400, 1, 13)};
  auto perfect = PitLoss({Var(refs[0]), Var(refs[1])}, refs);
  EXPECT_EQ(perfect.perm, (std::vector<int>{0, 1}));
  EXPECT_DOUBLE_EQ(perfect.loss.scalar(), -60.0);
  Mat n0 = refs[0] + 0.3 * RandomMat(400, 1, 14), n1 = refs[1] + 0.5 * RandomMat(400, 1, 15);
  auto straight = PitLoss({Var(n0), Var(n1)}, refs);
  auto swapped = PitLoss({Var(n1), Var(n0)}, refs);
  EXPECT_EQ(straight.perm, (std::vector<int>{0, 1}));
  EXPECT_EQ(swapped.perm, (std::vector<int>{1, 0}));
  EXPECT_NEAR(straight.loss.scalar(), swapped.loss.scalar(), 1e-12);
  EXPECT_THROW(PitLoss({Var(n0)}, refs), std::invalid_argument);
}

TEST(PitTest, ThreeSpeakerExhaustiveOracle) {
  for (uint64_t trial = 0; trial < 5; ++trial) {
    std::vector<Mat> refs, ests;
    for (int i = 0; i < 3; ++i) refs.push_back(RandomMat(300, 1, 100 * trial + i));
    for (int i = 0; i < 3; ++i)
      ests.push_back(refs[(i + trial) % 3] * 0.7 + 0.8 * RandomMat(300, 1, 100 * trial + 10 + i) +
                     0.2 * refs[(i + 1) % 3]);
    std::vector<int> perm = {0, 1, 2}, best;
    double best_val = 1e300;
    do {
      double v = 0.0;
      for (int i = 0; i < 3; ++i) v -= OracleSiSdr(ests[i], refs[perm[i]]);
      if (v / 3.0 < best_val) {
        best_val = v / 3.0;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    std::vector<Var> vs;
    for (auto& e : ests) vs.emplace_back(e);
    auto r = PitLoss(vs, refs);
    EXPECT_EQ(r.perm, best);
    EXPECT_NEAR(r.loss.scalar(), best_val, 1e-9);
    // Permuting the references together leaves the loss unchanged.
    std::vector<Mat> rot = {refs[2], refs[0], refs[1]};
    EXPECT_NEAR(PitLoss(vs, rot).loss.scalar(), r.loss.scalar(), 1e-12);
  }
}

SeparationSystem TinySystem(bool frontend, uint64_t seed) {
  SeparationSystem sys;
  auto cfg = TinyConfig();
  SeparatorConfig sc = SeparatorConfigFromJson(cfg);
  sc.use_frontend = frontend;
  if (frontend) {
    sys.frontend = std::make_unique<CspModel>(ModelConfigFromJson(cfg), seed);
    const auto& fc = sys.frontend->config().frontend;
    sys.separator = std::make_unique<Separator>(sc, fc.model_dim, fc.Hop(), seed + 1);
  } else {
    sys.separator = std::make_unique<Separator>(sc, 0, 0, seed + 1);
  }
  return sys;
}

TEST(SeparationSystemTest, EndToEndCausality) {
  SeparationSystem sys = TinySystem(true, 20);
  Mat x = RandomMat(6400, 1, 21, 0.1);
  auto base = sys.Separate(Var(x));
  ASSERT_EQ(base.estimates.size(), 2u);
  EXPECT_EQ(base.estimates[0].rows(), 6400);
  for (int n : {1000, 3217, 5000}) {
    Mat y = x;
    y.bottomRows(6400 - n) += RandomMat(6400 - n, 1, 22 + n, 0.1);
    auto pert = sys.Separate(Var(y));
    const int safe = n - 16;  // enc_kernel - enc_stride
    for (int s = 0; s < 2; ++s) {
      EXPECT_EQ(base.estimates[s].value().topRows(safe), pert.estimates[s].value().topRows(safe))
          << "n=" << n;
      EXPECT_NE(base.estimates[s].value().bottomRows(6400 - n),
                pert.estimates[s].value().bottomRows(6400 - n));
    }
  }
}

TEST(TrainSeparatorTest, FrontendStaysFrozen) {
  TempDir dir("sep");
  Manifest corpus = SimulateSyntheticCorpus(dir.path() / "data", 3, 1.0, 16000, {}, 30);
  Manifest train = corpus, valid = corpus;
  train.entries.resize(2);
  valid.entries.erase(valid.entries.begin(), valid.entries.begin() + 2);
  auto cfg = TinyConfig();
  cfg["sep_train"]["max_steps"] = 4;
  cfg["sep_train"]["valid_every"] = 2;
  cfg["sep_train"]["crop_s"] = 0.5;
  CspModel frontend(ModelConfigFromJson(cfg), 31);
  const uint64_t before = frontend.FrontendHash();
  const uint64_t all_before = frontend.params().Hash();
  auto r = TrainSeparator(train, valid, &frontend, SeparatorConfigFromJson(cfg),
                          SepTrainConfigFromJson(cfg), cfg, dir.path() / "out");
  EXPECT_EQ(frontend.FrontendHash(), before);
  EXPECT_EQ(frontend.params().Hash(), all_before);
  ASSERT_EQ(r.train_trace.size(), 4u);
  for (double v : r.train_trace) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(r.best.model, "separator");
  for (const char* f : {"sep_metrics.csv", "sep_valid.csv", "sep_best.ckpt", "sep_final.ckpt"})
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "out" / f)) << f;

  // The stored system reproduces the trained separator on a probe.
  SeparationSystem sys = LoadSeparationSystem(r.final);
  EXPECT_EQ(sys.frontend->FrontendHash(), before);
  EXPECT_THROW(TrainSeparator(train, valid, nullptr, SeparatorConfigFromJson(cfg),
                              SepTrainConfigFromJson(cfg), cfg, ""),
               std::invalid_argument);
  Checkpoint wrong = r.final;
  wrong.model = "frontend";
  EXPECT_THROW(LoadSeparationSystem(wrong), std::invalid_argument);
}

}  // namespace
}  // namespace csp
