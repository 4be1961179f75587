// src/metrics.cc

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

#include "csp/metrics.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

namespace csp {

namespace {

double ClampDb(double num, double den, double cap) {
  if (!(num > 0.0)) return -cap;
  if (!(den > 0.0)) return cap;
  return std::clamp(10.0 * std::log10(num / den), -cap, cap);
}

void CheckPair(const std::vector<double>& e, const std::vector<double>& r, const char* op) {
  if (e.size() != r.size() || e.empty())
    throw std::invalid_argument(std::string(op) + ": estimate and reference lengths differ");
}

}  // namespace

double SiSdr(const std::vector<double>& estimate, const std::vector<double>& reference,
             double cap_db, bool zero_mean) {
  CheckPair(estimate, reference, "si_sdr");
  const Eigen::Map<const Eigen::VectorXd> e0(estimate.data(), estimate.size());
  const Eigen::Map<const Eigen::VectorXd> r0(reference.data(), reference.size());
  Eigen::VectorXd e = e0, r = r0;
  if (zero_mean) {
    e.array() -= e0.mean();
    r.array() -= r0.mean();
  }
  const double rr = r.squaredNorm();
  if (!(rr > 0.0)) throw std::invalid_argument("si_sdr: zero reference");
  Eigen::VectorXd target = (e.dot(r) / rr) * r;
  return ClampDb(target.squaredNorm(), (e - target).squaredNorm(), cap_db);
}

double SiSdr(const Waveform& estimate, const Waveform& reference, double cap_db) {
  return SiSdr(estimate.samples, reference.samples, cap_db);
}

double Sdr(const std::vector<double>& estimate, const std::vector<double>& reference,
           double cap_db) {
  CheckPair(estimate, reference, "sdr");
  const Eigen::Map<const Eigen::VectorXd> e(estimate.data(), estimate.size());
  const Eigen::Map<const Eigen::VectorXd> r(reference.data(), reference.size());
  if (!(r.squaredNorm() > 0.0)) throw std::invalid_argument("sdr: zero reference");
  return ClampDb(r.squaredNorm(), (e - r).squaredNorm(), cap_db);
}

MetricRow ScoreUtterance(const std::string& id, const std::vector<Waveform>& estimates,
                         const std::vector<Waveform>& references, const Waveform& mixture) {
  const size_t C = references.size();
  if (C == 0) throw std::invalid_argument("score: utterance " + id + " has no references");
  if (estimates.size() != C)
    throw std::invalid_argument("score: " + std::to_string(estimates.size()) +
                                " estimates for " + std::to_string(C) + " references");
  Eigen::MatrixXd si(C, C);
  for (size_t i = 0; i < C; ++i)
    for (size_t j = 0; j < C; ++j) si(i, j) = SiSdr(estimates[i], references[j]);
  std::vector<int> perm(C), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_score = -std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (size_t i = 0; i < C; ++i) s += si(i, perm[i]);
    if (s > best_score) {
      best_score = s;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  MetricRow row;
  row.id = id;
  row.perm = best;
  double sep_si = 0.0, mix_si = 0.0, sep_sdr = 0.0, mix_sdr = 0.0;
  for (size_t i = 0; i < C; ++i) {
    const auto& ref = references[best[i]];
    sep_si += si(i, best[i]);
    mix_si += SiSdr(mixture, ref);
    sep_sdr += Sdr(estimates[i].samples, ref.samples);
    mix_sdr += Sdr(mixture.samples, ref.samples);
  }
  const double n = static_cast<double>(C);
  row.si_sdr_db = sep_si / n;
  row.si_sdri_db = sep_si / n - mix_si / n;
  row.sdri_db = sep_sdr / n - mix_sdr / n;
  return row;
}

MetricSummary Summarize(const std::vector<MetricRow>& rows) {
  MetricSummary s;
  for (const auto& r : rows) {
    if (!r.error.empty()) {
      ++s.failed;
      continue;
    }
    ++s.scored;
    s.mean_si_sdri_db += r.si_sdri_db;
    s.mean_sdri_db += r.sdri_db;
  }
  if (s.scored > 0) {
    s.mean_si_sdri_db /= s.scored;
    s.mean_sdri_db /= s.scored;
  }
  return s;
}

std::vector<MetricRow> EvaluateSet(const Manifest& manifest, const SeparateFn& separate) {
  std::vector<MetricRow> rows;
  for (const auto& e : manifest.entries) {
    MetricRow row;
    row.id = e.id;
    try {
      if (e.source_paths.empty())
        throw std::invalid_argument("no reference sources listed");
      MixtureExample ex = LoadExample(manifest, e);
      row = ScoreUtterance(e.id, separate(ex), ex.sources, ex.mixture);
    } catch (const std::exception& err) {
      row.error = err.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

SeparateFn SystemSeparator(const SeparationSystem& system) {
  return [&system](const MixtureExample& ex) {
    NoGradGuard no_grad;
    Mat col(static_cast<Eigen::Index>(ex.mixture.size()), 1);
    for (size_t i = 0; i < ex.mixture.size(); ++i)
      col(static_cast<Eigen::Index>(i), 0) = ex.mixture.samples[i];
    SeparationOutput out = system.Separate(Var(std::move(col)));
    std::vector<Waveform> est;
    for (const auto& e : out.estimates) {
      Waveform w;
      w.sample_rate = ex.mixture.sample_rate;
      w.samples.assign(e.value().data(), e.value().data() + e.value().size());
      est.push_back(std::move(w));
    }
    return est;
  };
}

void WriteMetricsCsv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(10) << "id,si_sdr_db,si_sdri_db,sdri_db,perm\n";
  for (const auto& r : rows) {
    if (!r.error.empty()) {
      out << r.id << ",nan,nan,nan,\n";
      continue;
    }
    out << r.id << ',' << r.si_sdr_db << ',' << r.si_sdri_db << ',' << r.sdri_db << ',';
    for (size_t i = 0; i < r.perm.size(); ++i) out << (i ? "-" : "") << r.perm[i];
    out << '\n';
  }
}

std::vector<HistogramBin> Histogram(const std::vector<MetricRow>& rows, double w) {
  if (!(w > 0.0)) throw std::invalid_argument("histogram: bin width must be > 0");
  std::map<long long, int> counts;
  for (const auto& r : rows)
    if (r.error.empty()) ++counts[static_cast<long long>(std::floor(r.si_sdri_db / w))];
  std::vector<HistogramBin> bins;
  if (counts.empty()) return bins;
  for (long long k = counts.begin()->first; k <= counts.rbegin()->first; ++k) {
    auto it = counts.find(k);
    bins.push_back({static_cast<double>(k) * w, static_cast<double>(k + 1) * w,
                    it == counts.end() ? 0 : it->second});
  }
  return bins;
}

void WriteHistogramCsv(const std::filesystem::path& path, const std::vector<HistogramBin>& bins) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(10) << "bin_lo_db,bin_hi_db,count\n";
  for (const auto& b : bins) out << b.lo_db << ',' << b.hi_db << ',' << b.count << '\n';
}

}  // namespace csp
