// src/model.cc

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

#include "csp/model.h"

#include <stdexcept>

#include "csp/ops.h"

namespace csp {

uint64_t DeriveSeed(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
  auto mix = [](uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return mix(mix(mix(mix(seed) ^ a) ^ b) ^ c);
}

void CspModelConfig::Validate() const {
  frontend.Validate();
  if (teacher_dim < 1) throw std::invalid_argument("model: teacher_dim must be >= 1");
  QuantizerConfig{quant_groups, quant_entries, codeword_dim, 1, 1}.Validate();
}

CspModel::CspModel(const CspModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.Validate();
  Rng rng(seed);
  const auto& f = cfg_.frontend;
  encoder_ = FeatureEncoder(store_, f, rng);
  context_ = ContextNetwork(store_, f, rng);
  mask_emb_ = store_.Add("mask_emb", NormalInit(1, f.conv_channels, 0.1, rng));
  q_u_ = GumbelQuantizer(store_, "quant_latent",
                         {cfg_.quant_groups, cfg_.quant_entries, cfg_.codeword_dim,
                          f.conv_channels, f.model_dim},
                         rng);
  q_v_ = GumbelQuantizer(store_, "quant_pattern",
                         {cfg_.quant_groups, cfg_.quant_entries, cfg_.codeword_dim, f.model_dim,
                          f.model_dim},
                         rng);
  bu_proj_ = LinearLayer::Create(store_, "bu_proj", f.conv_channels, f.model_dim, true, rng);
  ckd_proj_ = LinearLayer::Create(store_, "ckd_proj", cfg_.teacher_dim, f.model_dim, true, rng);
}

uint64_t CspModel::FrontendHash() const {
  ParamStore view;
  for (const auto& [name, v] : store_.entries())
    if (name.rfind("encoder.", 0) == 0 || name.rfind("context.", 0) == 0)
      view.entries().emplace_back(name, v);
  return view.Hash();
}

MaskedForward CspModel::Forward(const Var& wave, bool train, uint64_t seed) const {
  Rng rng(DeriveSeed(seed, 1));
  MaskedForward out;
  out.latents = encoder_.Forward(wave, train, &rng);
  const int T = static_cast<int>(out.latents.rows());
  out.plan = SampleMaskPlan(T, cfg_.frontend.mask_ratio, cfg_.frontend.mask_span,
                            DeriveSeed(seed, 2));
  out.patterns = context_.Forward(ApplyMask(out.latents, out.plan, mask_emb_), train, &rng);
  return out;
}

Var CspModel::Patterns(const Var& wave) const {
  return context_.Forward(encoder_.Forward(wave, false, nullptr), false, nullptr);
}

Var CspModel::Latents(const Var& wave) const { return encoder_.Forward(wave, false, nullptr); }

Var CspModel::StreamPatterns(const Var& chunk, StreamState* state) const {
  return context_.StreamForward(encoder_.StreamForward(chunk, &state->encoder), &state->context);
}

StepLoss CspModel::Loss(const MaskedForward& fwd, const Mat* teacher,
                        const TeacherCentroids* centroids, const LossSettings& s,
                        double gumbel_temperature, bool train, uint64_t seed) const {
  const auto& w = s.weights;
  const Var zero(Mat::Zero(1, 1));
  PredictionLoss td{zero, zero}, bu{zero, zero};
  Var ckd = zero;
  if (w.alpha > 0.0)
    td = TopDownLoss(fwd.patterns, fwd.latents, q_u_, gumbel_temperature, train, s.contrastive,
                     DeriveSeed(seed, 3), &fwd.plan);
  if (w.beta > 0.0)
    bu = BottomUpLoss(fwd.patterns, fwd.latents, q_v_, bu_proj_, gumbel_temperature, train,
                      s.contrastive, DeriveSeed(seed, 4), &fwd.plan);
  if (w.gamma > 0.0) {
    if (teacher == nullptr || centroids == nullptr)
      throw std::invalid_argument("csp loss: gamma > 0 needs teacher frames and centroids");
    ckd = CkdLoss(fwd.patterns, *teacher, *centroids, ckd_proj_, s.contrastive,
                  DeriveSeed(seed, 5), s.ckd_negatives, &fwd.plan);
  }
  StepLoss out;
  Var ahp = Add(Scale(Add(td.div, td.nce), w.alpha), Scale(Add(bu.div, bu.nce), w.beta));
  out.total = Add(ahp, Scale(ckd, w.gamma));
  out.report = CspLoss(td.nce.scalar(), td.div.scalar(), bu.nce.scalar(), bu.div.scalar(),
                       ckd.scalar(), w, s.contrastive.temperature);
  return out;
}

StepLoss MeanLoss(const std::vector<StepLoss>& parts) {
  if (parts.empty()) throw std::invalid_argument("mean loss: no parts");
  const double n = static_cast<double>(parts.size());
  std::vector<Var> totals;
  double td_nce = 0, td_div = 0, bu_nce = 0, bu_div = 0, ckd = 0;
  for (const auto& p : parts) {
    totals.push_back(p.total);
    td_nce += p.report.td_nce;
    td_div += p.report.td_div;
    bu_nce += p.report.bu_nce;
    bu_div += p.report.bu_div;
    ckd += p.report.ckd;
  }
  StepLoss out;
  out.total = Scale(Sum(ConcatRows(totals)), 1.0 / n);
  const auto& r = parts.front().report;
  out.report = CspLoss(td_nce / n, td_div / n, bu_nce / n, bu_div / n, ckd / n, r.weights,
                       r.temperature);
  return out;
}

}  // namespace csp
