// csp/frontend.h

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

#ifndef CSP_FRONTEND_H_
#define CSP_FRONTEND_H_

#include <cstdint>
#include <string>
#include <vector>

#include "csp/nn.h"
#include "csp/wav_io.h"

namespace csp {

struct FrontendConfig {
  int conv_channels = 512;
  std::vector<int> conv_strides{5, 2, 2, 2, 2, 2, 2};
  std::vector<int> conv_kernels{10, 3, 3, 3, 3, 2, 2};
  int norm_groups = 16;  // frame-wise group norm after the first block
  int model_dim = 768;
  int inner_dim = 3072;
  int heads = 8;
  int layers = 12;
  int pos_kernel = 128;
  int pos_groups = 16;
  double dropout = 0.1;
  double layerdrop = 0.05;
  double mask_ratio = 0.65;
  int mask_span = 10;

  void Validate() const;
  /// Product of strides: samples per output frame.
  int Hop() const;
  /// Output length after folding floor(len / stride) over the blocks.
  int64_t NumFrames(int64_t num_samples) const;
};

enum class FrameRole { kLatent, kPattern, kTeacher };

/// T x D frames at a fixed rate.
struct FrameSequence {
  Var values;
  double frame_rate = 0.0;
  FrameRole role = FrameRole::kLatent;

  Eigen::Index length() const { return values.rows(); }
  Eigen::Index dim() const { return values.cols(); }
};

struct MaskPlan {
  int num_frames = 0;
  int span = 1;
  std::vector<int> starts;  // sorted, distinct
  std::vector<int> masked;  // sorted union of [s, min(s + span, T))
};

/// round(ratio * T) distinct starts drawn without replacement, each masking
/// `span` frames clipped at T.
MaskPlan SampleMaskPlan(int num_frames, double ratio, int span, uint64_t seed);
MaskPlan MaskPlanFromStarts(int num_frames, std::vector<int> starts, int span);

/// Replaces masked rows by the shared mask vector (1 x D).
Var ApplyMask(const Var& z, const MaskPlan& plan, const Var& mask_vector);

/// Per-stream carry-over for chunked encoding.
struct EncoderState {
  std::vector<Mat> conv_cache;
};

class FeatureEncoder {
 public:
  FeatureEncoder() = default;
  FeatureEncoder(ParamStore& store, const FrontendConfig& cfg, Rng& rng);

  /// wave: L x 1 column. Returns Z (floor-folded T x conv_channels).
  Var Forward(const Var& wave, bool train, Rng* rng) const;
  /// Chunk length must be a multiple of the hop.
  Var StreamForward(const Var& chunk, EncoderState* state) const;

 private:
  Var Block(size_t i, const Var& conv_out, bool train, Rng* rng) const;

  FrontendConfig cfg_;
  std::vector<CausalConv> convs_;
  NormLayer first_norm_;
};

struct ContextState {
  Mat pos_cache;
  std::vector<Mat> keys;
  std::vector<Mat> values;
  Eigen::Index position = 0;
};

/// Transformer-decoder stack with a causal grouped-conv positional embedding.
class ContextNetwork {
 public:
  ContextNetwork() = default;
  ContextNetwork(ParamStore& store, const FrontendConfig& cfg, Rng& rng);

  Var Forward(const Var& masked_z, bool train, Rng* rng) const;
  Var StreamForward(const Var& z_chunk, ContextState* state) const;

 private:
  struct Block {
    NormLayer ln1, ln2;
    LinearLayer qkv, out, ff1, ff2;
  };
  Var RunBlock(const Block& b, const Var& x, const Var& attn_out, bool train, Rng* rng) const;

  FrontendConfig cfg_;
  LinearLayer in_proj_;
  CausalConv pos_conv_;
  std::vector<Block> blocks_;
  NormLayer final_norm_;
};

/// Checks the waveform is long enough and returns it as an L x 1 column.
Var WaveformColumn(const Waveform& w, int min_samples);

}  // namespace csp

#endif  // CSP_FRONTEND_H_
