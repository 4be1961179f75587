// src/pretext.cc

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

#include "csp/pretext.h"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "csp/ops.h"

namespace csp {

std::vector<int> SampleNegativeIndices(int num_frames, int positive, int count, Rng& rng) {
  if (num_frames < 2) throw std::invalid_argument("sample_negatives: need at least 2 frames");
  if (positive < 0 || positive >= num_frames)
    throw std::out_of_range("sample_negatives: positive index out of range");
  std::uniform_int_distribution<int> pick(0, num_frames - 2);
  std::vector<int> out(count);
  for (auto& j : out) {
    j = pick(rng);
    if (j >= positive) ++j;  // skip the positive
  }
  return out;
}

CandidateSet SampleNegatives(const Mat& seq, int t, int count, uint64_t seed) {
  if (seq.rows() < 2)
    throw std::invalid_argument("sample_negatives: sequence of length 1 has no negatives");
  Rng rng(seed);
  CandidateSet c;
  c.positive_index = t;
  c.negative_indices = SampleNegativeIndices(static_cast<int>(seq.rows()), t, count, rng);
  c.positive = seq.row(t);
  c.negatives.resize(count, seq.cols());
  for (int i = 0; i < count; ++i) c.negatives.row(i) = seq.row(c.negative_indices[i]);
  return c;
}

double InfoNce(const RowVec& anchor, const CandidateSet& candidates, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("info_nce: temperature must be > 0");
  const Eigen::Index n = candidates.negatives.rows();
  Mat bank(n + 1, anchor.size());
  bank.row(0) = candidates.positive;
  if (n > 0) bank.bottomRows(n) = candidates.negatives;
  std::vector<std::vector<int>> cand(1, std::vector<int>(n + 1));
  for (Eigen::Index j = 0; j <= n; ++j) cand[0][j] = static_cast<int>(j);
  Mat a(1, anchor.size());
  a.row(0) = anchor;
  NoGradGuard no_grad;
  return ContrastiveLoss(L2NormalizeRows(Var(a)), L2NormalizeRows(Var(bank)), cand, temperature)
      .scalar();
}

namespace {

std::vector<int> LossPositions(int num_frames, bool masked_only, const MaskPlan* plan,
                               int target_shift) {
  std::vector<int> pos;
  const int last = num_frames - target_shift;  // exclusive
  if (!masked_only || plan == nullptr) {
    for (int t = 0; t < last; ++t) pos.push_back(t);
    return pos;
  }
  std::vector<char> hit(num_frames, 0);
  for (int t : plan->masked)
    if (t >= 0 && t < num_frames) hit[t] = 1;
  for (int t = 0; t < last; ++t)
    if (hit[t + target_shift]) pos.push_back(t);
  return pos;
}

Var ZeroScalar() { return Var(Mat::Zero(1, 1)); }

// Shared tail of the top-down and bottom-up objectives. `anchors` holds one
// row per position; `target_of(t)` gives the positive bank row.
Var PredictiveNce(const Var& anchors, const QuantizeResult& q, const std::vector<int>& positions,
                  int shift_to_target, const ContrastiveOptions& opt, Rng& rng) {
  const int T = static_cast<int>(q.tokens.rows());
  std::vector<std::vector<int>> cand(positions.size());
  std::vector<std::vector<bool>> valid(positions.size());
  for (size_t m = 0; m < positions.size(); ++m) {
    const int target = positions[m] + shift_to_target;
    auto neg = SampleNegativeIndices(T, target, opt.num_negatives, rng);
    cand[m].reserve(neg.size() + 1);
    cand[m].push_back(target);
    cand[m].insert(cand[m].end(), neg.begin(), neg.end());
    valid[m].assign(cand[m].size(), true);
    if (opt.exclude_identical)
      for (size_t j = 1; j < cand[m].size(); ++j)
        valid[m][j] = q.indices[cand[m][j]] != q.indices[target];
  }
  return ContrastiveLoss(L2NormalizeRows(anchors), L2NormalizeRows(q.tokens), cand,
                         opt.temperature, &valid);
}

void CheckPair(const Var& patterns, const Var& latents, const char* op) {
  if (patterns.rows() != latents.rows())
    throw std::invalid_argument(std::string(op) + ": pattern and latent sequences differ in length");
  if (patterns.rows() < 2)
    throw std::invalid_argument(std::string(op) + ": need at least 2 frames");
}

}  // namespace

PredictionLoss TopDownLoss(const Var& patterns, const Var& latents, const GumbelQuantizer& q_u,
                           double gumbel_temperature, bool train, const ContrastiveOptions& opt,
                           uint64_t seed, const MaskPlan* plan) {
  CheckPair(patterns, latents, "td_loss");
  Rng rng(seed);
  QuantizeResult q = q_u.Quantize(latents, gumbel_temperature, train, &rng);
  PredictionLoss out;
  out.div = DiversityLoss(q.probs);
  auto positions = LossPositions(static_cast<int>(patterns.rows()), opt.masked_only, plan, 1);
  out.nce = positions.empty() ? ZeroScalar()
                              : PredictiveNce(GatherRows(patterns, positions), q, positions, 1,
                                              opt, rng);
  return out;
}

PredictionLoss BottomUpLoss(const Var& patterns, const Var& latents, const GumbelQuantizer& q_v,
                            const LinearLayer& anchor_proj, double gumbel_temperature,
                            bool train, const ContrastiveOptions& opt, uint64_t seed,
                            const MaskPlan* plan) {
  CheckPair(patterns, latents, "bu_loss");
  Rng rng(seed);
  QuantizeResult q = q_v.Quantize(patterns, gumbel_temperature, train, &rng);
  PredictionLoss out;
  out.div = DiversityLoss(q.probs);
  auto positions = LossPositions(static_cast<int>(patterns.rows()), opt.masked_only, plan, 1);
  if (positions.empty()) {
    out.nce = ZeroScalar();
    return out;
  }
  std::vector<int> future(positions.size());
  for (size_t i = 0; i < positions.size(); ++i) future[i] = positions[i] + 1;
  Var anchors = anchor_proj.Forward(GatherRows(latents, future));
  out.nce = PredictiveNce(anchors, q, positions, 0, opt, rng);
  return out;
}

std::vector<int> TeacherCentroids::Assign(const Mat& frames) const {
  if (frames.cols() != centroids.cols())
    throw std::invalid_argument("teacher centroids: frame dimension mismatch");
  std::vector<int> a(frames.rows());
  Eigen::VectorXd cn = centroids.rowwise().squaredNorm();
  Mat cross = frames * centroids.transpose();
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    Eigen::Index best;
    (cn.transpose() - 2.0 * cross.row(t)).minCoeff(&best);
    a[t] = static_cast<int>(best);
  }
  return a;
}

double TeacherCentroids::Objective(const Mat& frames) const {
  auto a = Assign(frames);
  double obj = 0.0;
  for (Eigen::Index t = 0; t < frames.rows(); ++t)
    obj += (frames.row(t) - centroids.row(a[t])).squaredNorm();
  return obj;
}

TeacherCentroids FitTeacherCentroids(const std::vector<Mat>& teacher_frames, int k, uint64_t seed,
                                     int max_iterations, std::vector<double>* trace) {
  Eigen::Index total = 0, dim = -1;
  for (const auto& f : teacher_frames) {
    if (dim >= 0 && f.cols() != dim) throw std::invalid_argument("kmeans: inconsistent frame dims");
    dim = f.cols();
    total += f.rows();
  }
  if (k < 2) throw std::invalid_argument("kmeans: K must be >= 2");
  if (total < k)
    throw std::invalid_argument("kmeans: " + std::to_string(total) + " frames for K=" +
                                std::to_string(k) + " clusters");
  Mat x(total, dim);
  Eigen::Index r = 0;
  for (const auto& f : teacher_frames) {
    x.middleRows(r, f.rows()) = f;
    r += f.rows();
  }

  Rng rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  TeacherCentroids tc;
  tc.centroids.resize(k, dim);
  // k-means++ seeding.
  std::uniform_int_distribution<Eigen::Index> first(0, total - 1);
  tc.centroids.row(0) = x.row(first(rng));
  Eigen::VectorXd d2 = (x.rowwise() - tc.centroids.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double sum = d2.sum();
    if (!(sum > 0.0))
      throw std::invalid_argument("kmeans: fewer than K=" + std::to_string(k) +
                                  " distinct frames");
    double u = uni(rng) * sum;
    Eigen::Index pick = total - 1;
    for (Eigen::Index i = 0; i < total; ++i) {
      u -= d2(i);
      if (u <= 0.0 && d2(i) > 0.0) {
        pick = i;
        break;
      }
    }
    while (d2(pick) <= 0.0) --pick;
    tc.centroids.row(c) = x.row(pick);
    d2 = d2.cwiseMin((x.rowwise() - tc.centroids.row(c)).rowwise().squaredNorm());
  }

  std::vector<int> assign;
  for (int it = 0; it < max_iterations; ++it) {
    auto next = tc.Assign(x);
    double obj = 0.0;
    for (Eigen::Index i = 0; i < total; ++i) obj += (x.row(i) - tc.centroids.row(next[i])).squaredNorm();
    if (trace) trace->push_back(obj);
    if (next == assign) break;
    assign = std::move(next);

    Mat sums = Mat::Zero(k, dim);
    std::vector<Eigen::Index> counts(k, 0);
    for (Eigen::Index i = 0; i < total; ++i) {
      sums.row(assign[i]) += x.row(i);
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c)
      if (counts[c] > 0) tc.centroids.row(c) = sums.row(c) / static_cast<double>(counts[c]);
    // Re-seed empty clusters from the points farthest from their centroid.
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      Eigen::Index far = 0;
      double best = -1.0;
      for (Eigen::Index i = 0; i < total; ++i) {
        const double d = (x.row(i) - tc.centroids.row(assign[i])).squaredNorm();
        if (d > best) {
          best = d;
          far = i;
        }
      }
      tc.centroids.row(c) = x.row(far);
      assign[far] = c;
    }
  }
  return tc;
}

Var CkdLoss(const Var& patterns, const Mat& teacher_frames, const TeacherCentroids& centroids,
            const LinearLayer& centroid_proj, const ContrastiveOptions& opt, uint64_t seed,
            CkdNegatives mode, const MaskPlan* plan) {
  const int T = static_cast<int>(patterns.rows());
  if (teacher_frames.rows() != T)
    throw std::invalid_argument("ckd_loss: teacher has " + std::to_string(teacher_frames.rows()) +
                                " frames but patterns have " + std::to_string(T));
  const int K = centroids.num_clusters();
  auto assign = centroids.Assign(teacher_frames);
  auto positions = LossPositions(T, opt.masked_only, plan, 0);
  if (positions.empty()) return ZeroScalar();

  Rng rng(seed);
  std::vector<int> cluster_size(K, 0);
  for (int a : assign) ++cluster_size[a];
  std::uniform_int_distribution<int> any_frame(0, T - 1);
  std::vector<std::vector<int>> cand(positions.size());
  for (size_t m = 0; m < positions.size(); ++m) {
    const int t = positions[m];
    const int pos = assign[t];
    auto& c = cand[m];
    c.reserve(opt.num_negatives + 1);
    c.push_back(pos);
    const bool other_frames = mode == CkdNegatives::kOtherFrames;
    if (other_frames && cluster_size[pos] < T) {
      for (int i = 0; i < opt.num_negatives; ++i) {
        int j;
        do {
          j = any_frame(rng);
        } while (assign[j] == pos);
        c.push_back(assign[j]);
      }
    } else if (other_frames && T >= 2) {
      // Every frame shares one cluster: draw from the other frames anyway.
      for (int j : SampleNegativeIndices(T, t, opt.num_negatives, rng)) c.push_back(assign[j]);
    } else {
      std::uniform_int_distribution<int> other(0, K - 2);
      for (int i = 0; i < opt.num_negatives; ++i) {
        int j = other(rng);
        if (j >= pos) ++j;
        c.push_back(j);
      }
    }
  }
  Var bank = L2NormalizeRows(centroid_proj.Forward(Var(centroids.centroids)));
  Var anchors = L2NormalizeRows(GatherRows(patterns, positions));
  return ContrastiveLoss(anchors, bank, cand, opt.temperature);
}

LossReport CspLoss(double td_nce, double td_div, double bu_nce, double bu_div, double ckd,
                   const LossWeights& w, double temperature) {
  if (w.alpha < 0.0 || w.beta < 0.0 || w.gamma < 0.0)
    throw std::invalid_argument("csp_loss: weights must be non-negative");
  LossReport r;
  r.td_nce = td_nce;
  r.td_div = td_div;
  r.bu_nce = bu_nce;
  r.bu_div = bu_div;
  r.ckd = ckd;
  r.weights = w;
  r.temperature = temperature;
  r.ahp = w.alpha * (td_div + td_nce) + w.beta * (bu_div + bu_nce);
  r.total = r.ahp + w.gamma * ckd;
  return r;
}

}  // namespace csp
