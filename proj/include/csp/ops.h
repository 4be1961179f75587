// csp/ops.h

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

#ifndef CSP_OPS_H_
#define CSP_OPS_H_

#include <random>
#include <vector>

#include "csp/autograd.h"

namespace csp {

// Elementwise and broadcasting arithmetic.
Var Add(const Var& a, const Var& b);
Var Sub(const Var& a, const Var& b);
Var Mul(const Var& a, const Var& b);
Var Scale(const Var& a, double s);
Var AddRowBroadcast(const Var& x, const Var& row);  // x (T x C) + row (1 x C)
Var MulRowBroadcast(const Var& x, const Var& row);  // x (T x C) * row (1 x C)
Var MulColBroadcast(const Var& x, const Var& col);  // x (T x C) * col (T x 1)

Var MatMul(const Var& a, const Var& b);
/// x (T x in) * W^T (W is out x in) + b (1 x out); b may be undefined.
Var Linear(const Var& x, const Var& weight, const Var& bias);

Var Gelu(const Var& x);
Var Relu(const Var& x);
Var Sigmoid(const Var& x);
/// Parametric ReLU with a single learnable slope (1 x 1).
Var PRelu(const Var& x, const Var& slope);

/// Inverted dropout; identity when p == 0.
Var Dropout(const Var& x, double p, std::mt19937_64& rng);

Var Sum(const Var& x);
Var Mean(const Var& x);

Var SliceRows(const Var& x, Eigen::Index begin, Eigen::Index count);
Var SliceCols(const Var& x, Eigen::Index begin, Eigen::Index count);
Var ConcatRows(const std::vector<Var>& parts);
Var ConcatCols(const std::vector<Var>& parts);
/// out[i] = x[index[i]]; a negative index yields a zero row.
Var GatherRows(const Var& x, const std::vector<int>& index);

/// Per-row normalisation over `groups` equal channel groups with a per-channel
/// affine. groups == 1 is layer norm. Statistics never cross rows.
Var GroupNormRows(const Var& x, int groups, const Var& gamma, const Var& beta,
                  double eps = 1e-5);

/// Running accumulators for cumulative layer norm. Carries sums across calls
/// so chunked processing reproduces a single full pass.
struct CumNormState {
  double count = 0.0;
  double sum = 0.0;
  double sum_sq = 0.0;
};

/// Cumulative layer norm: frame t is normalised with mean/variance over all
/// channels of frames <= t. `state` (optional) supplies and receives the
/// running sums from earlier chunks; gradients do not flow into it.
Var CumulativeLayerNorm(const Var& x, const Var& gamma, const Var& beta,
                        CumNormState* state = nullptr, double eps = 1e-8);

/// 1-D convolution over the row (time) axis of x (T x C_in).
/// weight is C_out x (K * C_in / groups), laid out tap-major: column
/// k * (C_in/groups) + i multiplies input channel i of tap k.
struct ConvSpec {
  int kernel = 1;
  int stride = 1;
  int dilation = 1;
  int groups = 1;
  int left_pad = 0;
};
Var Conv1d(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec);
Eigen::Index Conv1dOutputLength(Eigen::Index in_len, const ConvSpec& spec);

/// Overlap-adds frames (T x L) at the given hop into a column signal.
/// Frame t lands at sample t * hop - trim_front; samples outside
/// [0, out_len) are discarded.
Var OverlapAdd(const Var& frames, int hop, int trim_front, Eigen::Index out_len);

/// Multi-head scaled dot-product attention with a causal mask. Query row i is
/// at absolute position q_offset + i; key row j at position j. Keys with
/// position greater than the query's are masked.
Var CausalAttention(const Var& q, const Var& k, const Var& v, int heads,
                    Eigen::Index q_offset = 0);

Var SoftmaxRows(const Var& x);

/// Forward value is `hard`; the gradient passes straight to `soft`.
Var StraightThrough(const Mat& hard, const Var& soft);

/// Scales every row to unit L2 norm. Throws on a zero-norm row.
Var L2NormalizeRows(const Var& x);

/// Contrastive cross-entropy over cosine logits.
/// anchors: M x D, bank: B x D (both already unit-normalised).
/// candidates[m] lists bank rows; entry 0 is the positive.
/// valid (optional, same shape as candidates) drops entries from the
/// denominator. Returns the mean over anchors of
///   -log(exp(<a,pos>/w) / sum_j exp(<a,cand_j>/w)).
Var ContrastiveLoss(const Var& anchors, const Var& bank,
                    const std::vector<std::vector<int>>& candidates,
                    double temperature,
                    const std::vector<std::vector<bool>>* valid = nullptr);

/// 1 - (1/G) sum_g H(p_g) / ln R for a G x R matrix of distributions.
Var DiversityLoss(const Var& probs);

/// Negative scale-invariant SDR (dB) of a column estimate against a fixed
/// reference, with the SDR clamped to [-cap, cap].
Var NegSiSdr(const Var& estimate, const Mat& reference, double cap_db = 60.0);

}  // namespace csp

#endif  // CSP_OPS_H_
