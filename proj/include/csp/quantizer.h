// csp/quantizer.h

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

#ifndef CSP_QUANTIZER_H_
#define CSP_QUANTIZER_H_

#include <cstdint>
#include <string>
#include <vector>

#include "csp/nn.h"

namespace csp {

/// Shape of a product quantizer: `groups` codebooks of `entries` vectors,
/// each codeword_dim / groups wide.
struct QuantizerConfig {
  int groups = 2;
  int entries = 320;
  int codeword_dim = 256;
  int in_dim = 512;
  int out_dim = 768;

  void Validate() const;
};

struct QuantizeResult {
  Var tokens;                             // T x out_dim
  std::vector<std::vector<int>> indices;  // T x G selected entries
  Var probs;                              // G x R, softmax averaged over frames
};

/// Gumbel-softmax product quantizer (the CodebookSet plus its projections).
class GumbelQuantizer {
 public:
  GumbelQuantizer() = default;
  GumbelQuantizer(ParamStore& store, const std::string& name, const QuantizerConfig& cfg,
                  Rng& rng);

  /// Train mode draws Gumbel noise from `rng` and uses a hard one-hot forward
  /// with the soft relaxation as the backward path. Eval mode is argmax and
  /// passes no gradient to the logits.
  QuantizeResult Quantize(const Var& x, double temperature, bool train, Rng* rng) const;

  /// Same as Quantize but on precomputed logits (T x G*R).
  QuantizeResult QuantizeLogits(const Var& logits, double temperature, bool train,
                                Rng* rng) const;

  /// Output token for a given per-group index choice (used by membership checks).
  RowVec Codeword(const std::vector<int>& choice) const;

  const QuantizerConfig& config() const { return cfg_; }
  const LinearLayer& input_proj() const { return input_proj_; }
  const LinearLayer& output_proj() const { return output_proj_; }
  const Var& codebook() const { return codebook_; }

 private:
  QuantizerConfig cfg_;
  LinearLayer input_proj_;
  Var codebook_;  // (G*R) x (codeword_dim / G)
  LinearLayer output_proj_;
};

/// Standard Gumbel(0,1) samples, drawn row-major from `rng`.
Mat SampleGumbel(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// 1 - (1/G) sum_g H(p_g)/ln R. Rejects negative entries.
double DiversityLossValue(const Mat& probs);

/// max(floor, start * decay^step).
double AnnealTemperature(int64_t step, double start = 2.0, double floor = 0.5,
                         double decay = 0.999995);

}  // namespace csp

#endif  // CSP_QUANTIZER_H_
