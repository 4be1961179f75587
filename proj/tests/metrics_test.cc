// tests/metrics_test.cc

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

#include "csp/metrics.h"
#include "test_util.h"

namespace csp {
namespace {

using testing::RandomWave;
using testing::TempDir;

Waveform Wave(std::vector<double> s) {
  Waveform w;
  w.sample_rate = 16000;
  w.samples = std::move(s);
  return w;
}

Waveform Scaled(const Waveform& w, double k) {
  Waveform o = w;
  for (double& v : o.samples) v *= k;
  return o;
}

Waveform Sum(const Waveform& a, const Waveform& b) {
  Waveform o = a;
  for (size_t i = 0; i < o.samples.size(); ++i) o.samples[i] += b.samples[i];
  return o;
}

TEST(SiSdrTest, HandExamples) {
  Waveform s = RandomWave(800, 1);
  EXPECT_EQ(SiSdr(s, s), 60.0);
  // Raw signals, no mean removal: alpha = 1 and residual energy 1.
  EXPECT_NEAR(SiSdr({1.0, 1.0}, {1.0, 0.0}, 60.0, false), 0.0, 1e-12);
  // With means removed the same estimate carries no signal.
  EXPECT_EQ(SiSdr({1.0, 1.0}, {1.0, 0.0}), -60.0);
  EXPECT_THROW(SiSdr(s, Wave(std::vector<double>(800, 0.0))), std::invalid_argument);
  EXPECT_THROW(SiSdr(s, RandomWave(799, 2)), std::invalid_argument);
}

TEST(SiSdrTest, ScaleInvariance) {
  Waveform s = RandomWave(800, 3);
  Waveform e = Sum(s, RandomWave(800, 4));
  const double base = SiSdr(e, s);
  ASSERT_LT(std::abs(base), 60.0);
  for (double k : {2.0, 0.01, 37.5}) EXPECT_NEAR(SiSdr(Scaled(e, k), s), base, 1e-6);
  // Sdr is not scale invariant.
  EXPECT_GT(std::abs(Sdr(Scaled(e, 2.0).samples, s.samples) -
                     Sdr(e.samples, s.samples)),
            0.1);
}

TEST(ScoreTest, PerfectAndMixtureCopies) {
  Waveform s1 = RandomWave(1600, 5), s2 = RandomWave(1600, 6);
  Waveform mix = Sum(s1, s2);
  MetricRow perfect = ScoreUtterance("u", {s2, s1}, {s1, s2}, mix);
  EXPECT_EQ(perfect.perm, (std::vector<int>{1, 0}));
  EXPECT_EQ(perfect.si_sdr_db, 60.0);
  const double mix_si = (SiSdr(mix, s1) + SiSdr(mix, s2)) / 2.0;
  EXPECT_NEAR(perfect.si_sdri_db, 60.0 - mix_si, 1e-12);
  MetricRow copies = ScoreUtterance("u", {mix, mix}, {s1, s2}, mix);
  EXPECT_NEAR(copies.si_sdri_db, 0.0, 1e-12);
  EXPECT_NEAR(copies.sdri_db, 0.0, 1e-12);
  EXPECT_THROW(ScoreUtterance("u", {mix}, {s1, s2}, mix), std::invalid_argument);
}

TEST(ScoreTest, SummaryIsArithmeticMean) {
  std::vector<MetricRow> rows;
  double si = 0.0, sdr = 0.0;
  for (int u = 0; u < 5; ++u) {
    Waveform s1 = RandomWave(1000, 10 * u), s2 = RandomWave(1000, 10 * u + 1);
    Waveform mix = Sum(s1, s2);
    Waveform e1 = Sum(s1, Scaled(s2, 0.1 * (u + 1))), e2 = Sum(s2, Scaled(s1, 0.05 * (u + 1)));
    rows.push_back(ScoreUtterance("u" + std::to_string(u), {e1, e2}, {s1, s2}, mix));
    si += rows.back().si_sdri_db;
    sdr += rows.back().sdri_db;
  }
  MetricRow bad;
  bad.id = "broken";
  bad.error = "no references";
  rows.push_back(bad);
  MetricSummary sum = Summarize(rows);
  EXPECT_EQ(sum.scored, 5);
  EXPECT_EQ(sum.failed, 1);
  EXPECT_NEAR(sum.mean_si_sdri_db, si / 5.0, 1e-12);
  EXPECT_NEAR(sum.mean_sdri_db, sdr / 5.0, 1e-12);
}

TEST(EvaluateSetTest, MissingReferencesBecomeErrorRows) {
  TempDir dir("eval");
  Manifest m = SimulateSyntheticCorpus(dir.path(), 3, 0.5, 16000, {}, 7);
  m.entries[1].source_paths.clear();
  auto oracle = [](const MixtureExample& ex) { return ex.sources; };
  auto rows = EvaluateSet(m, oracle);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_TRUE(rows[0].error.empty());
  EXPECT_FALSE(rows[1].error.empty());
  EXPECT_EQ(rows[0].si_sdr_db, 60.0);
  EXPECT_EQ(rows[0].perm, (std::vector<int>{0, 1}));
  EXPECT_EQ(Summarize(rows).scored, 2);
  WriteMetricsCsv(dir.path() / "metrics.csv", rows);
  std::ifstream in(dir.path() / "metrics.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "id,si_sdr_db,si_sdri_db,sdri_db,perm");
  int n = 0;
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, 3);
}

std::vector<MetricRow> RowsAt(const std::vector<double>& v) {
  std::vector<MetricRow> rows;
  for (double x : v) {
    MetricRow r;
    r.si_sdri_db = x;
    rows.push_back(r);
  }
  return rows;
}

TEST(HistogramTest, CountsAndTranslation) {
  auto bins = Histogram(RowsAt({1.0, 1.4, 2.1}), 1.0);
  ASSERT_EQ(bins.size(), 2u);
  EXPECT_EQ(bins[0].lo_db, 1.0);
  EXPECT_EQ(bins[0].hi_db, 2.0);
  EXPECT_EQ(bins[0].count, 2);
  EXPECT_EQ(bins[1].lo_db, 2.0);
  EXPECT_EQ(bins[1].count, 1);

  std::vector<double> vals;
  for (int i = 0; i < 40; ++i) vals.push_back(std::sin(i * 1.3) * 7.0 + 3.0);
  auto a = Histogram(RowsAt(vals), 0.5);
  for (double& v : vals) v += 10.0;
  auto b = Histogram(RowsAt(vals), 0.5);
  ASSERT_EQ(a.size(), b.size());
  int total = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].count, b[i].count);
    EXPECT_DOUBLE_EQ(b[i].lo_db, a[i].lo_db + 10.0);
    total += a[i].count;
  }
  EXPECT_EQ(total, 40);
  EXPECT_TRUE(Histogram({}, 1.0).empty());
  EXPECT_THROW(Histogram(RowsAt({1.0}), 0.0), std::invalid_argument);
}

}  // namespace
}  // namespace csp
