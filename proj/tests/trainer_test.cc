// tests/trainer_test.cc

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

#include <fstream>

#include "csp/archive.h"
#include "csp/config.h"
#include "csp/trainer.h"
#include "test_util.h"

namespace csp {
namespace {

using testing::RandomMat;
using testing::TempDir;
using testing::TinyConfig;

TEST(LrScheduleTest, WarmupAndDecay) {
  EXPECT_EQ(LrSchedule(0, 5e-4, 32000), 0.0);
  EXPECT_DOUBLE_EQ(LrSchedule(16000, 5e-4, 32000), 2.5e-4);
  EXPECT_DOUBLE_EQ(LrSchedule(32000, 5e-4, 32000), 5e-4);
  EXPECT_NEAR(LrSchedule(128000, 5e-4, 32000), 2.5e-4, 1e-9);
  PretrainConfig cfg;
  EXPECT_DOUBLE_EQ(LrSchedule(32000, cfg), 5e-4);
  EXPECT_THROW(LrSchedule(-1, cfg), std::invalid_argument);
}

TEST(PretrainConfigTest, Validation) {
  PretrainConfig cfg;
  EXPECT_NO_THROW(cfg.Validate());
  cfg.patience = 0;
  EXPECT_THROW(cfg.Validate(), std::invalid_argument);
  cfg = PretrainConfig();
  cfg.dropout = 1.0;
  EXPECT_THROW(cfg.Validate(), std::invalid_argument);
  cfg = PretrainConfig();
  cfg.loss.weights.gamma = -1.0;
  EXPECT_THROW(cfg.Validate(), std::invalid_argument);
}

TEST(AdamWTest, MatchesScalarOracle) {
  ParamStore store;
  Var w = store.Add("w", Mat::Constant(1, 2, 0.5));
  AdamW opt(&store, 0.01);
  const double grads[3][2] = {{1.0, -2.0}, {0.5, 0.0}, {-1.0, 3.0}};
  double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {0.5, 0.5};
  const double lr = 0.1;
  for (int t = 1; t <= 3; ++t) {
    store.ZeroGrad();
    w.node()->AccumulateGrad((Mat(1, 2) << grads[t - 1][0], grads[t - 1][1]).finished());
    opt.Step(lr);
    for (int i = 0; i < 2; ++i) {
      const double g = grads[t - 1][i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.98 * v[i] + 0.02 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.98, t));
      ref[i] -= lr * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * ref[i]);
      EXPECT_NEAR(w.value()(0, i), ref[i], 1e-12);
    }
  }
  EXPECT_EQ(opt.steps(), 3);
}

TEST(AdamWTest, ClipGradNorm) {
  ParamStore store;
  Var a = store.Add("a", Mat::Zero(1, 1));
  Var b = store.Add("b", Mat::Zero(1, 1));
  a.node()->AccumulateGrad(Mat::Constant(1, 1, 30.0));
  b.node()->AccumulateGrad(Mat::Constant(1, 1, 40.0));
  AdamW opt(&store, 0.0);
  EXPECT_DOUBLE_EQ(opt.ClipGradNorm(10.0), 50.0);
  EXPECT_NEAR(a.grad()(0, 0), 6.0, 1e-9);
  EXPECT_NEAR(b.grad()(0, 0), 8.0, 1e-9);
  EXPECT_NEAR(opt.ClipGradNorm(100.0), 10.0, 1e-9);
  EXPECT_NEAR(a.grad()(0, 0), 6.0, 1e-9);
}

Checkpoint SampleCheckpoint(const CspModel& model) {
  Checkpoint c;
  c.model = "frontend";
  c.config = TinyConfig();
  c.config["model"] = ModelConfigToJson(model.config());
  c.params = CaptureParams(model.params());
  for (const auto& [n, m] : c.params) {
    c.adam_m.emplace_back(n, m * 0.5);
    c.adam_v.emplace_back(n, m.cwiseAbs());
  }
  c.extra.emplace_back("teacher_centroids", RandomMat(4, 3, 1));
  c.step = 17;
  c.round = 3;
  c.best_valid = 1.0 / 3.0;
  return c;
}

TEST(CheckpointTest, RoundTripReproducesForward) {
  TempDir dir("ckpt");
  CspModel model(ModelConfigFromJson(TinyConfig()), 5);
  Checkpoint c = SampleCheckpoint(model);
  SaveCheckpoint(dir.path() / "a.ckpt", c);
  Checkpoint back = LoadCheckpoint(dir.path() / "a.ckpt");
  EXPECT_EQ(back.model, "frontend");
  EXPECT_EQ(back.config, c.config);
  EXPECT_EQ(back.step, 17);
  EXPECT_EQ(back.round, 3);
  EXPECT_EQ(back.best_valid, 1.0 / 3.0);
  ASSERT_EQ(back.params.size(), c.params.size());
  for (size_t i = 0; i < c.params.size(); ++i) {
    EXPECT_EQ(back.params[i].first, c.params[i].first);
    EXPECT_EQ(back.params[i].second, c.params[i].second);
    EXPECT_EQ(back.adam_v[i].second, c.adam_v[i].second);
  }
  ASSERT_NE(back.FindExtra("teacher_centroids"), nullptr);
  EXPECT_EQ(*back.FindExtra("teacher_centroids"), c.extra[0].second);

  auto restored = ModelFromCheckpoint(back);
  EXPECT_EQ(restored->params().Hash(), model.params().Hash());
  Var probe(RandomMat(3200, 1, 6, 0.1));
  EXPECT_EQ(restored->Patterns(probe).value(), model.Patterns(probe).value());
}

TEST(CheckpointTest, TruncatedFileIsCorrupt) {
  TempDir dir("ckpt");
  CspModel model(ModelConfigFromJson(TinyConfig()), 5);
  const auto path = dir.path() / "a.ckpt";
  SaveCheckpoint(path, SampleCheckpoint(model));
  const auto size = std::filesystem::file_size(path);
  for (auto keep : {size - 9, size / 2, static_cast<uintmax_t>(12), static_cast<uintmax_t>(0)}) {
    std::filesystem::resize_file(path, keep);
    try {
      LoadCheckpoint(path);
      ADD_FAILURE() << "truncated to " << keep << " bytes was accepted";
    } catch (const ArchiveError& e) {
      EXPECT_EQ(e.code(), ArchiveError::Code::kCorrupt) << e.what();
    }
  }
}

TEST(CheckpointTest, VersionMismatchNamesBothVersions) {
  TempDir dir("ckpt");
  CspModel model(ModelConfigFromJson(TinyConfig()), 5);
  Checkpoint c = SampleCheckpoint(model);
  c.format_version = 7;
  SaveCheckpoint(dir.path() / "v.ckpt", c);
  try {
    LoadCheckpoint(dir.path() / "v.ckpt");
    FAIL() << "version 7 accepted";
  } catch (const ArchiveError& e) {
    EXPECT_EQ(e.code(), ArchiveError::Code::kVersion);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("7"), std::string::npos) << msg;
    EXPECT_NE(msg.find(std::to_string(kCheckpointVersion)), std::string::npos) << msg;
  }
  NamedArrays other;
  other.kind = "something-else";
  WriteArchive(dir.path() / "k.ckpt", other);
  try {
    LoadCheckpoint(dir.path() / "k.ckpt");
    FAIL() << "foreign kind accepted";
  } catch (const ArchiveError& e) {
    EXPECT_EQ(e.code(), ArchiveError::Code::kKind);
  }
  EXPECT_THROW(LoadCheckpoint(dir.path() / "missing.ckpt"), ArchiveError);
}

TEST(CheckpointTest, RestoreRejectsMissingOrMisshapen) {
  CspModel model(ModelConfigFromJson(TinyConfig()), 5);
  auto arrays = CaptureParams(model.params());
  auto missing = arrays;
  missing.pop_back();
  EXPECT_THROW(RestoreParams(&model.params(), missing), std::invalid_argument);
  auto bad = arrays;
  bad[0].second = Mat::Zero(1, 1);
  EXPECT_THROW(RestoreParams(&model.params(), bad), std::invalid_argument);
}

class PretrainRunTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("pretrain");
    corpus_ = SimulateSyntheticCorpus(dir_->path() / "data", 4, 1.0, 16000, {}, 11);
  }
  static void TearDownTestSuite() { delete dir_; }

  static std::pair<Manifest, Manifest> Split() {
    Manifest train = corpus_, valid = corpus_;
    train.entries.resize(3);
    valid.entries.erase(valid.entries.begin(), valid.entries.begin() + 3);
    return {train, valid};
  }

  static PretrainResult Run(const nlohmann::json& cfg, const std::filesystem::path& out) {
    auto [train, valid] = Split();
    auto teacher = MakeTeacher(cfg);
    return Pretrain(train, valid, ModelConfigFromJson(cfg), PretrainConfigFromJson(cfg),
                    teacher.get(), cfg, out);
  }

  static nlohmann::json Config() {
    nlohmann::json cfg = TinyConfig();
    cfg["pretrain"]["max_steps"] = 6;
    cfg["pretrain"]["valid_every"] = 2;
    cfg["pretrain"]["crop_s"] = 0.5;
    return cfg;
  }

  static TempDir* dir_;
  static Manifest corpus_;
};

TempDir* PretrainRunTest::dir_ = nullptr;
Manifest PretrainRunTest::corpus_;

void ExpectIdentities(const LossReport& r) {
  EXPECT_EQ(r.ahp, r.weights.alpha * (r.td_div + r.td_nce) + r.weights.beta * (r.bu_div + r.bu_nce));
  EXPECT_EQ(r.total, r.ahp + r.weights.gamma * r.ckd);
}

TEST_F(PretrainRunTest, DeterministicUnderFixedSeed) {
  const auto a = Run(Config(), dir_->path() / "a");
  const auto b = Run(Config(), "");
  ASSERT_EQ(a.train_trace.size(), 6u);
  ASSERT_EQ(b.train_trace.size(), 6u);
  for (size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(a.train_trace[i].total, b.train_trace[i].total) << "step " << i + 1;
    ExpectIdentities(a.train_trace[i]);
    EXPECT_TRUE(std::isfinite(a.train_trace[i].total));
  }
  EXPECT_EQ(a.valid_trace, b.valid_trace);
  EXPECT_EQ(a.final.params.size(), b.final.params.size());
  for (size_t i = 0; i < a.final.params.size(); ++i)
    EXPECT_EQ(a.final.params[i].second, b.final.params[i].second);

  for (const char* f : {"metrics.csv", "valid.csv", "best.ckpt", "final.ckpt"})
    EXPECT_TRUE(std::filesystem::exists(dir_->path() / "a" / f)) << f;
  std::ifstream metrics(dir_->path() / "a" / "metrics.csv");
  std::string header;
  std::getline(metrics, header);
  EXPECT_EQ(header, "step,lr,td_nce,td_div,bu_nce,bu_div,ckd,total");
  int rows = 0;
  for (std::string line; std::getline(metrics, line);) ++rows;
  EXPECT_EQ(rows, 6);
}

TEST_F(PretrainRunTest, BestNoWorseThanFinalAndTeacherFrozen) {
  auto cfg = Config();
  cfg["pretrain"]["valid_every"] = 1;
  const auto r = Run(cfg, dir_->path() / "b");
  ASSERT_FALSE(r.valid_trace.empty());
  double min_valid = 1e300;
  for (const auto& [step, v] : r.valid_trace) min_valid = std::min(min_valid, v);
  EXPECT_EQ(r.best.best_valid, min_valid);
  EXPECT_LE(r.best.best_valid, r.valid_trace.back().second);
  // The retained checkpoint scores its recorded loss on the validation set.
  auto model = ModelFromCheckpoint(r.best);
  auto [train, valid] = Split();
  auto teacher = MakeTeacher(cfg);
  auto set = LoadPretrainExamples(valid, teacher.get(), model->config().frontend.Hop(), 0.0);
  const auto pc = PretrainConfigFromJson(cfg);
  LossReport again = ValidationLoss(*model, set, &r.centroids, pc, r.best.step);
  EXPECT_NEAR(again.total, r.best.best_valid, 1e-9);
  // Teacher centroids are carried unchanged from start to finish.
  ASSERT_NE(r.best.FindExtra("teacher_centroids"), nullptr);
  ASSERT_NE(r.final.FindExtra("teacher_centroids"), nullptr);
  EXPECT_EQ(*r.best.FindExtra("teacher_centroids"), r.centroids.centroids);
  EXPECT_EQ(*r.final.FindExtra("teacher_centroids"), r.centroids.centroids);
}

TEST_F(PretrainRunTest, DisabledDistillationLogsZero) {
  auto cfg = Config();
  cfg["loss"]["gamma"] = 0.0;
  const auto r = Run(cfg, "");
  for (const auto& rep : r.train_trace) {
    EXPECT_EQ(rep.ckd, 0.0);
    EXPECT_EQ(rep.total, rep.ahp);
  }
}

TEST_F(PretrainRunTest, RejectsBadSplits) {
  auto cfg = Config();
  auto teacher = MakeTeacher(cfg);
  const auto mc = ModelConfigFromJson(cfg);
  const auto pc = PretrainConfigFromJson(cfg);
  EXPECT_THROW(Pretrain(corpus_, corpus_, mc, pc, teacher.get(), cfg, ""), std::invalid_argument);
  EXPECT_THROW(Pretrain(Manifest{}, corpus_, mc, pc, teacher.get(), cfg, ""), std::invalid_argument);
  EXPECT_THROW(Pretrain(corpus_, Manifest{}, mc, pc, teacher.get(), cfg, ""), std::invalid_argument);
  auto [train, valid] = Split();
  EXPECT_THROW(Pretrain(train, valid, mc, pc, nullptr, cfg, ""), std::invalid_argument);
}

}  // namespace
}  // namespace csp
