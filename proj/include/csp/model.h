// csp/model.h

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

#ifndef CSP_MODEL_H_
#define CSP_MODEL_H_

#include <cstdint>
#include <memory>

#include "csp/frontend.h"
#include "csp/nn.h"
#include "csp/pretext.h"
#include "csp/quantizer.h"

namespace csp {

struct CspModelConfig {
  FrontendConfig frontend;
  int quant_groups = 2;
  int quant_entries = 320;
  int codeword_dim = 256;
  int teacher_dim = 40;

  void Validate() const;
};

/// Everything the pretext objectives need besides the frontend body.
struct LossSettings {
  ContrastiveOptions contrastive;
  LossWeights weights;
  CkdNegatives ckd_negatives = CkdNegatives::kOtherFrames;
};

struct MaskedForward {
  Var latents;   // Z before masking, T x conv_channels
  Var patterns;  // C from the masked Z, T x model_dim
  MaskPlan plan;
};

struct StepLoss {
  Var total;  // differentiable scalar
  LossReport report;
};

/// The CSP frontend (encoder + context network) together with its
/// pretraining heads: mask embedding, both quantizers and the anchor /
/// centroid projections. Owns its parameters.
class CspModel {
 public:
  CspModel(const CspModelConfig& cfg, uint64_t seed);
  CspModel(const CspModel&) = delete;
  CspModel& operator=(const CspModel&) = delete;

  const CspModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  /// Hash over the parameters a separator consumes (encoder + context).
  uint64_t FrontendHash() const;

  MaskedForward Forward(const Var& wave, bool train, uint64_t seed) const;
  /// Eval-mode unmasked pattern sequence C for an L x 1 waveform.
  Var Patterns(const Var& wave) const;
  Var Latents(const Var& wave) const;

  struct StreamState {
    EncoderState encoder;
    ContextState context;
  };
  /// Hop-aligned chunk in, newly completed pattern frames out.
  Var StreamPatterns(const Var& chunk, StreamState* state) const;

  /// Pretext losses on one example. `teacher` and `centroids` may be null when
  /// gamma is zero. Terms whose weight is zero are skipped and reported as 0.
  StepLoss Loss(const MaskedForward& fwd, const Mat* teacher, const TeacherCentroids* centroids,
                const LossSettings& settings, double gumbel_temperature, bool train,
                uint64_t seed) const;

  const GumbelQuantizer& latent_quantizer() const { return q_u_; }
  const GumbelQuantizer& pattern_quantizer() const { return q_v_; }
  const LinearLayer& bu_proj() const { return bu_proj_; }
  const LinearLayer& ckd_proj() const { return ckd_proj_; }

 private:
  CspModelConfig cfg_;
  ParamStore store_;
  FeatureEncoder encoder_;
  ContextNetwork context_;
  Var mask_emb_;
  GumbelQuantizer q_u_, q_v_;
  LinearLayer bu_proj_, ckd_proj_;
};

/// Averages per-example losses. The returned report is rebuilt from the mean
/// components so its identities hold exactly.
StepLoss MeanLoss(const std::vector<StepLoss>& parts);

/// Deterministic sub-seed derivation (splitmix64 over the inputs).
uint64_t DeriveSeed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0);

}  // namespace csp

#endif  // CSP_MODEL_H_
