// csp/metrics.h

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

#ifndef CSP_METRICS_H_
#define CSP_METRICS_H_

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "csp/data_sim.h"
#include "csp/separation.h"
#include "csp/wav_io.h"

namespace csp {

/// Scale-invariant SDR in dB, clamped to +-cap_db. Means are removed first
/// unless `zero_mean` is false. An estimate with no energy scores -cap_db.
double SiSdr(const std::vector<double>& estimate, const std::vector<double>& reference,
             double cap_db = 60.0, bool zero_mean = true);
double SiSdr(const Waveform& estimate, const Waveform& reference, double cap_db = 60.0);
/// Plain SDR 10 log10(|s|^2 / |s_hat - s|^2), clamped to +-cap_db.
double Sdr(const std::vector<double>& estimate, const std::vector<double>& reference,
           double cap_db = 60.0);

struct MetricRow {
  std::string id;
  double si_sdr_db = 0.0;
  double si_sdri_db = 0.0;
  double sdri_db = 0.0;
  std::vector<int> perm;  // perm[i]: reference matched to estimate i
  std::string error;      // non-empty when the row could not be scored
};

/// PIT-aligned (by SI-SDR) metrics for one utterance; values are speaker means.
MetricRow ScoreUtterance(const std::string& id, const std::vector<Waveform>& estimates,
                         const std::vector<Waveform>& references, const Waveform& mixture);

struct MetricSummary {
  double mean_si_sdri_db = 0.0;
  double mean_sdri_db = 0.0;
  int scored = 0;
  int failed = 0;
};
MetricSummary Summarize(const std::vector<MetricRow>& rows);

using SeparateFn = std::function<std::vector<Waveform>(const MixtureExample&)>;

/// Scores every manifest entry. Entries without references (or whose
/// separation throws) become error rows and are left out of the summary.
std::vector<MetricRow> EvaluateSet(const Manifest& manifest, const SeparateFn& separate);
SeparateFn SystemSeparator(const SeparationSystem& system);

void WriteMetricsCsv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);

struct HistogramBin {
  double lo_db = 0.0;
  double hi_db = 0.0;
  int count = 0;
};
/// Half-open bins [k*w, (k+1)*w) spanning the SI-SDRi values of scored rows.
std::vector<HistogramBin> Histogram(const std::vector<MetricRow>& rows, double bin_width_db);
void WriteHistogramCsv(const std::filesystem::path& path, const std::vector<HistogramBin>& bins);

}  // namespace csp

#endif  // CSP_METRICS_H_
