// csp/separation.h

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

#ifndef CSP_SEPARATION_H_
#define CSP_SEPARATION_H_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "csp/data_sim.h"
#include "csp/model.h"
#include "csp/nn.h"
#include "csp/trainer.h"
#include "json.hpp"

namespace csp {

struct SeparatorConfig {
  int enc_kernel = 32;
  int enc_stride = 16;
  int enc_dim = 512;     // N
  int bottleneck = 128;  // B
  int hidden = 512;      // H
  int kernel = 3;        // P
  int blocks = 8;        // X, dilations 1..2^(X-1)
  int repeats = 3;       // R
  int speakers = 2;
  bool causal = true;
  bool use_frontend = true;

  void Validate() const;
};

/// Pattern frame feeding separator frame t: the newest pattern whose input
/// span ends no later than frame t's, i.e. floor((t+1)/ratio) - 1, clamped to
/// the last available pattern. -1 (no pattern yet) maps to a zero row.
std::vector<int> AdapterIndex(Eigen::Index first_frame, Eigen::Index count, int ratio,
                              Eigen::Index num_patterns);

struct SeparationOutput {
  std::vector<Var> masks;      // per speaker, T x enc_dim in [0, 1]
  std::vector<Var> estimates;  // per speaker, L x 1
};

/// Per-stream carry-over. Not shareable between streams.
struct SeparatorStreamState {
  Mat enc_cache;
  CumNormState in_norm;
  std::vector<Mat> dconv_cache;
  std::vector<CumNormState> norm1, norm2;
  Mat adapted;  // projected pattern rows received so far
  Eigen::Index frames_done = 0;
  std::vector<Mat> tail;  // per speaker, overlap-add carry (enc_kernel - enc_stride rows)
};

/// Causal mask-estimation separator with an additive pattern-fusion input.
class Separator {
 public:
  /// pattern_dim / pattern_hop describe the frontend; ignored when
  /// cfg.use_frontend is false.
  Separator(const SeparatorConfig& cfg, int pattern_dim, int pattern_hop, uint64_t seed);
  Separator(const Separator&) = delete;
  Separator& operator=(const Separator&) = delete;

  const SeparatorConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  int frames_per_pattern() const { return ratio_; }

  /// mixture L x 1 -> T x enc_dim, T = floor(L / enc_stride), nonnegative.
  Var Encode(const Var& mixture) const;
  /// patterns T_C x pattern_dim -> target_frames x enc_dim.
  Var Adapt(const Var& patterns, Eigen::Index target_frames) const;
  /// Sigmoid masks from encoded + adapted (adapted may be undefined).
  std::vector<Var> Masks(const Var& encoded, const Var& adapted) const;
  /// Decodes mask * encoded; frame t covers samples [t*stride, t*stride+kernel).
  Var Reconstruct(const Var& encoded, const Var& mask, Eigen::Index out_len) const;

  /// `patterns` is required iff the config uses the frontend.
  SeparationOutput Forward(const Var& mixture, const Var* patterns) const;

  /// Consumes a stride-aligned chunk (and, with a frontend, the pattern frames
  /// completed by it) and returns the finished samples per speaker.
  std::vector<Mat> StreamStep(const Var& chunk, const Var* new_patterns,
                              SeparatorStreamState* state) const;

 private:
  struct Block {
    LinearLayer in;
    Var prelu1;
    NormLayer norm1;
    CausalConv dconv;
    Var prelu2;
    NormLayer norm2;
    LinearLayer out;
  };
  std::vector<Var> MaskHead(const Var& x, SeparatorStreamState* state) const;

  SeparatorConfig cfg_;
  int ratio_ = 1;
  ParamStore store_;
  CausalConv encoder_;
  LinearLayer adapter_;
  NormLayer in_norm_;
  LinearLayer bottleneck_;
  std::vector<Block> blocks_;
  Var out_prelu_;
  LinearLayer mask_proj_;
  LinearLayer decoder_;  // kernel x enc_dim, no bias
};

/// Mean negative SI-SDR over speakers under the best assignment. perm[i] is
/// the reference matched to estimate i.
struct PitResult {
  Var loss;
  std::vector<int> perm;
};
PitResult PitLoss(const std::vector<Var>& estimates, const std::vector<Mat>& references,
                  double cap_db = 60.0);

/// A frozen frontend (optional) together with a separator.
struct SeparationSystem {
  std::unique_ptr<CspModel> frontend;
  std::unique_ptr<Separator> separator;

  SeparationOutput Separate(const Var& mixture) const;
};

SeparationSystem LoadSeparationSystem(const Checkpoint& ckpt);

struct SepTrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;
  int64_t warmup_steps = 0;
  double crop_s = 4.0;
  int batch_size = 2;
  int64_t max_steps = 1000;
  int64_t valid_every = 100;
  int patience = 10;
  double grad_clip = 5.0;
  uint64_t seed = 0;

  void Validate() const;
};

struct SepTrainResult {
  std::vector<double> train_trace;  // PIT loss per step
  std::vector<std::pair<int64_t, double>> valid_trace;
  Checkpoint best;
  Checkpoint final;
  bool early_stopped = false;
};

/// Trains a separator with the frontend frozen. `frontend` may be null when the
/// config does not use one. Patterns are computed once per crop and cached.
SepTrainResult TrainSeparator(const Manifest& train, const Manifest& valid,
                              const CspModel* frontend, const SeparatorConfig& sep_cfg,
                              const SepTrainConfig& cfg, const nlohmann::json& config_snapshot,
                              const std::filesystem::path& out_dir);

}  // namespace csp

#endif  // CSP_SEPARATION_H_
