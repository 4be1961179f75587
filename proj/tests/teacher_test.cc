// tests/teacher_test.cc

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

#include "csp/archive.h"
#include "csp/teacher.h"
#include "test_util.h"

namespace csp {
namespace {

using testing::RandomMat;
using testing::RandomWave;
using testing::TempDir;

TEST(LogMelTeacherTest, ShapeNormalisationAndDeterminism) {
  LogMelTeacher t;
  Waveform w = RandomWave(16000, 1);
  Mat f = t.Frames("u", w, 50);
  ASSERT_EQ(f.rows(), 50);
  ASSERT_EQ(f.cols(), 40);
  EXPECT_TRUE(f.allFinite());
  // Each band is standardised over the utterance.
  for (int c = 0; c < 40; ++c) {
    EXPECT_NEAR(f.col(c).mean(), 0.0, 1e-9);
  }
  EXPECT_EQ(f, t.Frames("u", w, 50));
  EXPECT_EQ(t.Frames("u", w, 53).rows(), 53);

  LogMelOptions raw;
  raw.normalize = false;
  Mat r = LogMelTeacher(raw).Frames("u", w, 50);
  EXPECT_GT(r.col(10).mean() * r.col(10).mean(), 1e-6);
}

TEST(LogMelTeacherTest, LouderToneRaisesItsBand) {
  LogMelOptions o;
  o.normalize = false;
  LogMelTeacher t(o);
  Waveform quiet{std::vector<double>(16000), 16000}, loud = quiet;
  for (size_t i = 0; i < 16000; ++i) {
    quiet.samples[i] = 0.01 * std::sin(2 * M_PI * 1000.0 * i / 16000.0);
    loud.samples[i] = 10.0 * quiet.samples[i];
  }
  Mat q = t.Frames("q", quiet, 50), l = t.Frames("l", loud, 50);
  Eigen::Index band;
  q.row(25).maxCoeff(&band);
  EXPECT_NEAR(l(25, band) - q(25, band), std::log(100.0), 0.05);
}

TEST(FileTeacherTest, RateMappingAndPadding) {
  TempDir dir("teacher");
  Mat src = RandomMat(5, 3, 2);
  WriteTeacherFile(dir.path() / "t.arch", {{"a", src}}, 25.0);
  FileTeacher t(dir.path() / "t.arch", 50.0);
  EXPECT_EQ(t.dim(), 3);
  EXPECT_EQ(t.frame_rate(), 25.0);
  Waveform w;
  Mat f = t.Frames("a", w, 12);
  for (int i = 0; i < 12; ++i) EXPECT_EQ(f.row(i), src.row(std::min(i / 2, 4))) << i;
  EXPECT_THROW(t.Frames("missing", w, 3), std::out_of_range);
  NamedArrays other;
  other.kind = "csp-checkpoint";
  WriteArchive(dir.path() / "c.arch", other);
  EXPECT_THROW(FileTeacher(dir.path() / "c.arch", 50.0), ArchiveError);
}

}  // namespace
}  // namespace csp
