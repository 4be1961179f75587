// src/frontend.cc

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

#include "csp/frontend.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace csp {

void FrontendConfig::Validate() const {
  if (conv_strides.empty() || conv_strides.size() != conv_kernels.size())
    throw std::invalid_argument("frontend: conv_strides and conv_kernels must have equal, "
                                "non-zero length");
  for (size_t i = 0; i < conv_strides.size(); ++i) {
    if (conv_strides[i] < 1) throw std::invalid_argument("frontend: strides must be >= 1");
    if (conv_kernels[i] < conv_strides[i])
      throw std::invalid_argument("frontend: block " + std::to_string(i) + " kernel " +
                                  std::to_string(conv_kernels[i]) + " is smaller than stride " +
                                  std::to_string(conv_strides[i]));
  }
  if (conv_channels < 1 || norm_groups < 1 || conv_channels % norm_groups != 0)
    throw std::invalid_argument("frontend: conv_channels must be divisible by norm_groups");
  if (model_dim < 1 || heads < 1 || model_dim % heads != 0)
    throw std::invalid_argument("frontend: model_dim must be divisible by heads");
  if (pos_groups < 1 || model_dim % pos_groups != 0 || pos_kernel < 1)
    throw std::invalid_argument("frontend: model_dim must be divisible by pos_groups");
  if (layers < 0 || inner_dim < 1) throw std::invalid_argument("frontend: bad layers/inner_dim");
  if (dropout < 0.0 || dropout >= 1.0 || layerdrop < 0.0 || layerdrop >= 1.0)
    throw std::invalid_argument("frontend: dropout rates must lie in [0, 1)");
  if (!(mask_ratio > 0.0 && mask_ratio <= 1.0) || mask_span < 1)
    throw std::invalid_argument("frontend: mask_ratio must lie in (0, 1] and mask_span >= 1");
}

int FrontendConfig::Hop() const {
  return std::accumulate(conv_strides.begin(), conv_strides.end(), 1, std::multiplies<>());
}

int64_t FrontendConfig::NumFrames(int64_t num_samples) const {
  int64_t n = num_samples;
  for (int s : conv_strides) n /= s;
  return n;
}

MaskPlan MaskPlanFromStarts(int num_frames, std::vector<int> starts, int span) {
  MaskPlan plan;
  plan.num_frames = num_frames;
  plan.span = span;
  std::sort(starts.begin(), starts.end());
  starts.erase(std::unique(starts.begin(), starts.end()), starts.end());
  std::vector<char> hit(num_frames, 0);
  for (int s : starts) {
    if (s < 0 || s >= num_frames) throw std::out_of_range("mask plan: start outside [0, T)");
    for (int t = s; t < std::min(s + span, num_frames); ++t) hit[t] = 1;
  }
  plan.starts = std::move(starts);
  for (int t = 0; t < num_frames; ++t)
    if (hit[t]) plan.masked.push_back(t);
  return plan;
}

MaskPlan SampleMaskPlan(int num_frames, double ratio, int span, uint64_t seed) {
  if (num_frames < 1 || !(ratio > 0.0 && ratio <= 1.0) || span < 1)
    throw std::invalid_argument("sample_mask_plan: need T >= 1, 0 < ratio <= 1, span >= 1");
  const int count = static_cast<int>(std::lround(ratio * num_frames));
  std::vector<int> pool(num_frames);
  std::iota(pool.begin(), pool.end(), 0);
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: first `count` entries become the sample.
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, num_frames - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return MaskPlanFromStarts(num_frames, std::move(pool), span);
}

Var ApplyMask(const Var& z, const MaskPlan& plan, const Var& mask_vector) {
  if (mask_vector.rows() != 1 || mask_vector.cols() != z.cols())
    throw std::invalid_argument("apply_mask: mask vector must be 1 x D");
  std::vector<int> rows = plan.masked;
  for (int t : rows)
    if (t < 0 || t >= z.rows())
      throw std::out_of_range("apply_mask: masked index " + std::to_string(t) +
                              " outside [0, " + std::to_string(z.rows()) + ")");
  Mat out = z.value();
  for (int t : rows) out.row(t) = mask_vector.value().row(0);
  return MakeOp(std::move(out), {z, mask_vector}, [rows](Node& self) {
    if (self.parents[0]->requires_grad) {
      Mat g = self.grad;
      for (int t : rows) g.row(t).setZero();
      self.parents[0]->AccumulateGrad(g);
    }
    if (self.parents[1]->requires_grad) {
      Mat g = Mat::Zero(1, self.grad.cols());
      for (int t : rows) g.row(0) += self.grad.row(t);
      self.parents[1]->AccumulateGrad(g);
    }
  });
}

Var WaveformColumn(const Waveform& w, int min_samples) {
  if (static_cast<int64_t>(w.size()) < min_samples)
    throw std::invalid_argument("input has " + std::to_string(w.size()) +
                                " samples; at least " + std::to_string(min_samples) +
                                " are required");
  Mat col(static_cast<Eigen::Index>(w.size()), 1);
  for (size_t i = 0; i < w.size(); ++i) col(static_cast<Eigen::Index>(i), 0) = w.samples[i];
  return Var(std::move(col));
}

FeatureEncoder::FeatureEncoder(ParamStore& store, const FrontendConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  cfg_.Validate();
  int in = 1;
  for (size_t i = 0; i < cfg.conv_strides.size(); ++i) {
    convs_.push_back(CausalConv::Create(store, "encoder.conv" + std::to_string(i), in,
                                        cfg.conv_channels, cfg.conv_kernels[i],
                                        cfg.conv_strides[i], 1, 1, false, rng));
    // He initialisation keeps activations at unit scale through the GELU stack.
    Mat& wt = convs_.back().weight.mutable_value();
    wt = NormalInit(wt.rows(), wt.cols(), std::sqrt(2.0 / static_cast<double>(wt.cols())), rng);
    in = cfg.conv_channels;
  }
  first_norm_ = NormLayer::Create(store, "encoder.norm0", cfg.conv_channels);
}

Var FeatureEncoder::Block(size_t i, const Var& conv_out, bool train, Rng* rng) const {
  Var x = conv_out;
  if (i == 0) x = GroupNormRows(x, cfg_.norm_groups, first_norm_.gamma, first_norm_.beta);
  if (train && cfg_.dropout > 0.0) x = Dropout(x, cfg_.dropout, *rng);
  return Gelu(x);
}

Var FeatureEncoder::Forward(const Var& wave, bool train, Rng* rng) const {
  if (wave.cols() != 1) throw std::invalid_argument("encode: waveform must be a column");
  if (wave.rows() < cfg_.Hop())
    throw std::invalid_argument("encode: input has " + std::to_string(wave.rows()) +
                                " samples; minimum length is " + std::to_string(cfg_.Hop()));
  Var x = wave;
  for (size_t i = 0; i < convs_.size(); ++i) x = Block(i, convs_[i].Forward(x), train, rng);
  return x;
}

Var FeatureEncoder::StreamForward(const Var& chunk, EncoderState* state) const {
  if (chunk.rows() % cfg_.Hop() != 0)
    throw std::invalid_argument("encode: chunk length must be a multiple of the hop (" +
                                std::to_string(cfg_.Hop()) + ")");
  state->conv_cache.resize(convs_.size());
  Var x = chunk;
  for (size_t i = 0; i < convs_.size(); ++i)
    x = Block(i, convs_[i].StreamForward(x, &state->conv_cache[i]), false, nullptr);
  return x;
}

ContextNetwork::ContextNetwork(ParamStore& store, const FrontendConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  cfg_.Validate();
  const int d = cfg.model_dim;
  in_proj_ = LinearLayer::Create(store, "context.in_proj", cfg.conv_channels, d, true, rng);
  pos_conv_ = CausalConv::Create(store, "context.pos_conv", d, d, cfg.pos_kernel, 1, 1,
                                 cfg.pos_groups, true, rng);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "context.block" + std::to_string(l);
    Block b;
    b.ln1 = NormLayer::Create(store, p + ".ln1", d);
    b.qkv = LinearLayer::Create(store, p + ".qkv", d, 3 * d, true, rng);
    b.out = LinearLayer::Create(store, p + ".out", d, d, true, rng);
    b.ln2 = NormLayer::Create(store, p + ".ln2", d);
    b.ff1 = LinearLayer::Create(store, p + ".ff1", d, cfg.inner_dim, true, rng);
    b.ff2 = LinearLayer::Create(store, p + ".ff2", cfg.inner_dim, d, true, rng);
    blocks_.push_back(std::move(b));
  }
  final_norm_ = NormLayer::Create(store, "context.final_norm", d);
}

Var ContextNetwork::RunBlock(const Block& b, const Var& x, const Var& attn_out, bool train,
                             Rng* rng) const {
  const double p = train ? cfg_.dropout : 0.0;
  Var y = Add(x, p > 0.0 ? Dropout(b.out.Forward(attn_out), p, *rng) : b.out.Forward(attn_out));
  Var h = GroupNormRows(y, 1, b.ln2.gamma, b.ln2.beta);
  Var f = Gelu(b.ff1.Forward(h));
  if (p > 0.0) f = Dropout(f, p, *rng);
  f = b.ff2.Forward(f);
  if (p > 0.0) f = Dropout(f, p, *rng);
  return Add(y, f);
}

Var ContextNetwork::Forward(const Var& masked_z, bool train, Rng* rng) const {
  if (masked_z.cols() != cfg_.conv_channels)
    throw std::invalid_argument("contextualize: input dimension " +
                                std::to_string(masked_z.cols()) + " != conv_channels " +
                                std::to_string(cfg_.conv_channels));
  const int d = cfg_.model_dim;
  Var x = in_proj_.Forward(masked_z);
  x = Add(x, Gelu(pos_conv_.Forward(x)));
  if (train && cfg_.dropout > 0.0) x = Dropout(x, cfg_.dropout, *rng);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (const auto& b : blocks_) {
    if (train && cfg_.layerdrop > 0.0 && uni(*rng) < cfg_.layerdrop) continue;
    Var qkv = b.qkv.Forward(GroupNormRows(x, 1, b.ln1.gamma, b.ln1.beta));
    Var a = CausalAttention(SliceCols(qkv, 0, d), SliceCols(qkv, d, d), SliceCols(qkv, 2 * d, d),
                            cfg_.heads);
    x = RunBlock(b, x, a, train, rng);
  }
  return GroupNormRows(x, 1, final_norm_.gamma, final_norm_.beta);
}

Var ContextNetwork::StreamForward(const Var& z_chunk, ContextState* state) const {
  const int d = cfg_.model_dim;
  Var x = in_proj_.Forward(z_chunk);
  x = Add(x, Gelu(pos_conv_.StreamForward(x, &state->pos_cache)));
  state->keys.resize(blocks_.size());
  state->values.resize(blocks_.size());
  for (size_t l = 0; l < blocks_.size(); ++l) {
    const auto& b = blocks_[l];
    Var qkv = b.qkv.Forward(GroupNormRows(x, 1, b.ln1.gamma, b.ln1.beta));
    Mat& kc = state->keys[l];
    Mat& vc = state->values[l];
    const Eigen::Index old = kc.rows();
    kc.conservativeResize(old + qkv.rows(), d);
    vc.conservativeResize(old + qkv.rows(), d);
    kc.bottomRows(qkv.rows()) = qkv.value().middleCols(d, d);
    vc.bottomRows(qkv.rows()) = qkv.value().middleCols(2 * d, d);
    Var a = CausalAttention(SliceCols(qkv, 0, d), Var(kc), Var(vc), cfg_.heads, state->position);
    x = RunBlock(b, x, a, false, nullptr);
  }
  state->position += z_chunk.rows();
  return GroupNormRows(x, 1, final_norm_.gamma, final_norm_.beta);
}

}  // namespace csp
