// csp/pretext.h

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

#ifndef CSP_PRETEXT_H_
#define CSP_PRETEXT_H_

#include <cstdint>
#include <vector>

#include "csp/frontend.h"
#include "csp/nn.h"
#include "csp/quantizer.h"

namespace csp {

/// One positive and N negatives drawn from the same sequence.
struct CandidateSet {
  RowVec positive;
  Mat negatives;  // N x D
  int positive_index = -1;
  std::vector<int> negative_indices;
};

/// N indices uniform over [0, T) \ {positive}; with replacement.
std::vector<int> SampleNegativeIndices(int num_frames, int positive, int count, Rng& rng);
CandidateSet SampleNegatives(const Mat& seq, int t, int count, uint64_t seed);

/// -log softmax of the positive among {positive} U negatives under cosine
/// similarity divided by `temperature`.
double InfoNce(const RowVec& anchor, const CandidateSet& candidates, double temperature);

struct ContrastiveOptions {
  double temperature = 0.1;
  int num_negatives = 100;
  /// Drop negatives whose token equals the positive's (same code in every group).
  bool exclude_identical = true;
  /// Restrict loss positions to masked frames instead of all valid t.
  bool masked_only = false;
};

struct PredictionLoss {
  Var nce;
  Var div;
};

/// Top-down: pattern c_t picks the future latent token u_{t+1} (quantised z_{t+1})
/// out of tokens at other positions.
PredictionLoss TopDownLoss(const Var& patterns, const Var& latents, const GumbelQuantizer& q_u,
                           double gumbel_temperature, bool train, const ContrastiveOptions& opt,
                           uint64_t seed, const MaskPlan* plan = nullptr);

/// Bottom-up: projected future latent z_{t+1} recognises the current pattern
/// token v_t (quantised c_t).
PredictionLoss BottomUpLoss(const Var& patterns, const Var& latents, const GumbelQuantizer& q_v,
                            const LinearLayer& anchor_proj, double gumbel_temperature,
                            bool train, const ContrastiveOptions& opt, uint64_t seed,
                            const MaskPlan* plan = nullptr);

/// K-means centroids of teacher frames; assignment is the nearest centroid.
struct TeacherCentroids {
  Mat centroids;  // K x D_teacher

  int num_clusters() const { return static_cast<int>(centroids.rows()); }
  std::vector<int> Assign(const Mat& frames) const;
  double Objective(const Mat& frames) const;
};

/// Lloyd iterations from a k-means++ seeding. `trace` receives the objective
/// after every assignment step.
TeacherCentroids FitTeacherCentroids(const std::vector<Mat>& teacher_frames, int k,
                                     uint64_t seed, int max_iterations = 100,
                                     std::vector<double>* trace = nullptr);

enum class CkdNegatives {
  kOtherFrames,     // assigned centroids of frames in other clusters
  kOtherCentroids,  // centroids other than the positive's
};

/// Distillation: pattern c_t picks the (projected) centroid assigned to
/// teacher frame t.
Var CkdLoss(const Var& patterns, const Mat& teacher_frames, const TeacherCentroids& centroids,
            const LinearLayer& centroid_proj, const ContrastiveOptions& opt, uint64_t seed,
            CkdNegatives mode = CkdNegatives::kOtherFrames, const MaskPlan* plan = nullptr);

struct LossWeights {
  double alpha = 1.0;
  double beta = 10.0;
  double gamma = 10.0;
};

struct LossReport {
  double td_nce = 0.0, td_div = 0.0;
  double bu_nce = 0.0, bu_div = 0.0;
  double ckd = 0.0;
  double ahp = 0.0;
  double total = 0.0;
  LossWeights weights;
  double temperature = 0.1;
};

/// Fills ahp = alpha*(td_div+td_nce) + beta*(bu_div+bu_nce) and
/// total = ahp + gamma*ckd. Rejects negative weights.
LossReport CspLoss(double td_nce, double td_div, double bu_nce, double bu_div, double ckd,
                   const LossWeights& weights, double temperature = 0.1);

}  // namespace csp

#endif  // CSP_PRETEXT_H_
