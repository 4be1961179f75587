// src/separation.cc

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

#include "csp/separation.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "csp/config.h"
#include "csp/ops.h"

namespace csp {

void SeparatorConfig::Validate() const {
  if (enc_stride < 1 || enc_kernel < enc_stride)
    throw std::invalid_argument("separator: enc_kernel must be >= enc_stride >= 1");
  if (enc_dim < 1 || bottleneck < 1 || hidden < 1 || kernel < 1 || blocks < 1 || repeats < 1)
    throw std::invalid_argument("separator: dimensions and block counts must be >= 1");
  if (speakers < 2) throw std::invalid_argument("separator: speakers must be >= 2");
  if (!causal) throw std::invalid_argument("separator: only the causal variant is implemented");
}

std::vector<int> AdapterIndex(Eigen::Index first_frame, Eigen::Index count, int ratio,
                              Eigen::Index num_patterns) {
  std::vector<int> idx(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    const Eigen::Index k = (first_frame + i + 1) / ratio - 1;
    idx[i] = static_cast<int>(std::min(k, num_patterns - 1));
  }
  return idx;
}

Separator::Separator(const SeparatorConfig& cfg, int pattern_dim, int pattern_hop, uint64_t seed)
    : cfg_(cfg) {
  cfg_.Validate();
  Rng rng(seed);
  const int N = cfg_.enc_dim, B = cfg_.bottleneck, H = cfg_.hidden;
  encoder_ = CausalConv::Create(store_, "sep.encoder", 1, N, cfg_.enc_kernel, cfg_.enc_stride, 1,
                                1, false, rng);
  if (cfg_.use_frontend) {
    if (pattern_dim < 1 || pattern_hop < cfg_.enc_stride || pattern_hop % cfg_.enc_stride != 0)
      throw std::invalid_argument("separator: frontend hop must be a multiple of enc_stride");
    ratio_ = pattern_hop / cfg_.enc_stride;
    adapter_ = LinearLayer::Create(store_, "sep.adapter", pattern_dim, N, true, rng);
  }
  in_norm_ = NormLayer::Create(store_, "sep.in_norm", N);
  bottleneck_ = LinearLayer::Create(store_, "sep.bottleneck", N, B, true, rng);
  for (int r = 0; r < cfg_.repeats; ++r) {
    for (int x = 0; x < cfg_.blocks; ++x) {
      const std::string p = "sep.tcn" + std::to_string(r * cfg_.blocks + x);
      Block b;
      b.in = LinearLayer::Create(store_, p + ".in", B, H, true, rng);
      b.prelu1 = store_.Add(p + ".prelu1", Mat::Constant(1, 1, 0.25));
      b.norm1 = NormLayer::Create(store_, p + ".norm1", H);
      b.dconv = CausalConv::Create(store_, p + ".dconv", H, H, cfg_.kernel, 1, 1 << x, H, true,
                                   rng);
      b.prelu2 = store_.Add(p + ".prelu2", Mat::Constant(1, 1, 0.25));
      b.norm2 = NormLayer::Create(store_, p + ".norm2", H);
      b.out = LinearLayer::Create(store_, p + ".out", H, B, true, rng);
      blocks_.push_back(std::move(b));
    }
  }
  out_prelu_ = store_.Add("sep.out_prelu", Mat::Constant(1, 1, 0.25));
  mask_proj_ = LinearLayer::Create(store_, "sep.mask", B, cfg_.speakers * N, true, rng);
  decoder_ = LinearLayer::Create(store_, "sep.decoder", N, cfg_.enc_kernel, false, rng);
}

Var Separator::Encode(const Var& mixture) const {
  if (mixture.cols() != 1) throw std::invalid_argument("sep_encode: mixture must be a column");
  if (mixture.rows() < cfg_.enc_kernel)
    throw std::invalid_argument("sep_encode: input has " + std::to_string(mixture.rows()) +
                                " samples; minimum length is " +
                                std::to_string(cfg_.enc_kernel));
  return Relu(encoder_.Forward(mixture));
}

Var Separator::Adapt(const Var& patterns, Eigen::Index target_frames) const {
  if (!cfg_.use_frontend) throw std::logic_error("adapt: separator has no frontend input");
  if (patterns.rows() < 1) throw std::invalid_argument("adapt: no pattern frames");
  return GatherRows(adapter_.Forward(patterns),
                    AdapterIndex(0, target_frames, ratio_, patterns.rows()));
}

std::vector<Var> Separator::MaskHead(const Var& x_in, SeparatorStreamState* st) const {
  Var x = bottleneck_.Forward(
      CumulativeLayerNorm(x_in, in_norm_.gamma, in_norm_.beta, st ? &st->in_norm : nullptr));
  if (st) {
    st->dconv_cache.resize(blocks_.size());
    st->norm1.resize(blocks_.size());
    st->norm2.resize(blocks_.size());
  }
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const Block& b = blocks_[i];
    Var h = CumulativeLayerNorm(PRelu(b.in.Forward(x), b.prelu1), b.norm1.gamma, b.norm1.beta,
                                st ? &st->norm1[i] : nullptr);
    h = st ? b.dconv.StreamForward(h, &st->dconv_cache[i]) : b.dconv.Forward(h);
    h = CumulativeLayerNorm(PRelu(h, b.prelu2), b.norm2.gamma, b.norm2.beta,
                            st ? &st->norm2[i] : nullptr);
    x = Add(x, b.out.Forward(h));
  }
  Var m = Sigmoid(mask_proj_.Forward(PRelu(x, out_prelu_)));
  std::vector<Var> masks;
  for (int s = 0; s < cfg_.speakers; ++s)
    masks.push_back(SliceCols(m, static_cast<Eigen::Index>(s) * cfg_.enc_dim, cfg_.enc_dim));
  return masks;
}

std::vector<Var> Separator::Masks(const Var& encoded, const Var& adapted) const {
  if (encoded.cols() != cfg_.enc_dim)
    throw std::invalid_argument("separate: encoded width differs from enc_dim");
  if (adapted.defined() &&
      (adapted.rows() != encoded.rows() || adapted.cols() != encoded.cols()))
    throw std::invalid_argument("separate: encoded and adapted shapes differ");
  return MaskHead(adapted.defined() ? Add(encoded, adapted) : encoded, nullptr);
}

Var Separator::Reconstruct(const Var& encoded, const Var& mask, Eigen::Index out_len) const {
  if (mask.rows() != encoded.rows() || mask.cols() != encoded.cols())
    throw std::invalid_argument("reconstruct: mask and encoding shapes differ");
  return OverlapAdd(decoder_.Forward(Mul(mask, encoded)), cfg_.enc_stride, 0, out_len);
}

SeparationOutput Separator::Forward(const Var& mixture, const Var* patterns) const {
  Var enc = Encode(mixture);
  Var adapted;
  if (cfg_.use_frontend) {
    if (patterns == nullptr) throw std::invalid_argument("separate: pattern input required");
    adapted = Adapt(*patterns, enc.rows());
  }
  SeparationOutput out;
  out.masks = Masks(enc, adapted);
  for (const auto& m : out.masks) out.estimates.push_back(Reconstruct(enc, m, mixture.rows()));
  return out;
}

std::vector<Mat> Separator::StreamStep(const Var& chunk, const Var* new_patterns,
                                       SeparatorStreamState* st) const {
  const int S = cfg_.enc_stride, K = cfg_.enc_kernel;
  Var enc = Relu(encoder_.StreamForward(chunk, &st->enc_cache));
  const Eigen::Index n = enc.rows();
  Var input = enc;
  if (cfg_.use_frontend) {
    if (new_patterns == nullptr) throw std::invalid_argument("stream: pattern input required");
    if (new_patterns->rows() > 0) {
      Mat proj = adapter_.Forward(*new_patterns).value();
      const Eigen::Index old = st->adapted.rows();
      st->adapted.conservativeResize(old + proj.rows(), proj.cols());
      st->adapted.bottomRows(proj.rows()) = proj;
    }
    const Eigen::Index avail = st->adapted.rows();
    auto idx = AdapterIndex(st->frames_done, n, ratio_, std::max<Eigen::Index>(avail, 1));
    for (int i : idx)
      if (i >= avail) throw std::logic_error("stream: pattern frame not yet available");
    Mat adapted = Mat::Zero(n, cfg_.enc_dim);
    for (Eigen::Index i = 0; i < n; ++i)
      if (idx[i] >= 0) adapted.row(i) = st->adapted.row(idx[i]);
    input = Add(enc, Var(std::move(adapted)));
  }
  auto masks = MaskHead(input, st);
  st->frames_done += n;
  st->tail.resize(cfg_.speakers);
  std::vector<Mat> out;
  const Eigen::Index done = n * S;
  for (int s = 0; s < cfg_.speakers; ++s) {
    Mat frames = decoder_.Forward(Mul(masks[s], enc)).value();
    Mat buf = Mat::Zero(done + K - S, 1);
    if (st->tail[s].rows() == K - S) buf.topRows(K - S) = st->tail[s];
    for (Eigen::Index t = 0; t < n; ++t)
      buf.middleRows(t * S, K) += frames.row(t).transpose();
    out.push_back(buf.topRows(done));
    st->tail[s] = buf.bottomRows(K - S);
  }
  return out;
}

PitResult PitLoss(const std::vector<Var>& estimates, const std::vector<Mat>& references,
                  double cap_db) {
  const size_t C = estimates.size();
  if (C == 0 || C != references.size())
    throw std::invalid_argument("pit_loss: " + std::to_string(C) + " estimates for " +
                                std::to_string(references.size()) + " references");
  if (C > 4) throw std::invalid_argument("pit_loss: at most 4 speakers are supported");
  Mat cost(C, C);
  {
    NoGradGuard no_grad;
    for (size_t i = 0; i < C; ++i)
      for (size_t j = 0; j < C; ++j)
        cost(i, j) = NegSiSdr(estimates[i], references[j], cap_db).scalar();
  }
  std::vector<int> perm(C), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (size_t i = 0; i < C; ++i) c += cost(i, perm[i]);
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  std::vector<Var> terms;
  for (size_t i = 0; i < C; ++i) terms.push_back(NegSiSdr(estimates[i], references[best[i]], cap_db));
  return {Scale(Sum(ConcatRows(terms)), 1.0 / static_cast<double>(C)), best};
}

SeparationOutput SeparationSystem::Separate(const Var& mixture) const {
  if (separator->config().use_frontend) {
    Var patterns = frontend->Patterns(mixture);
    return separator->Forward(mixture, &patterns);
  }
  return separator->Forward(mixture, nullptr);
}

SeparationSystem LoadSeparationSystem(const Checkpoint& ckpt) {
  if (ckpt.model != "separator")
    throw std::invalid_argument("checkpoint holds a '" + ckpt.model +
                                "' model where a separator was expected");
  SeparationSystem sys;
  SeparatorConfig sc = SeparatorConfigFromJson(ckpt.config);
  int pattern_dim = 0, hop = 0;
  if (sc.use_frontend) {
    sys.frontend = std::make_unique<CspModel>(ModelConfigFromJson(ckpt.config), 0);
    std::vector<std::pair<std::string, Mat>> fe;
    for (const auto& [n, m] : ckpt.extra)
      if (n.rfind("frontend/", 0) == 0) fe.emplace_back(n.substr(9), m);
    RestoreParams(&sys.frontend->params(), fe);
    pattern_dim = sys.frontend->config().frontend.model_dim;
    hop = sys.frontend->config().frontend.Hop();
  }
  sys.separator = std::make_unique<Separator>(sc, pattern_dim, hop, 0);
  RestoreParams(&sys.separator->params(), ckpt.params);
  return sys;
}

void SepTrainConfig::Validate() const {
  if (!(lr > 0.0) || weight_decay < 0.0 || warmup_steps < 0)
    throw std::invalid_argument("train-sep: need lr > 0, weight_decay >= 0, warmup_steps >= 0");
  if (!(crop_s > 0.0) || batch_size < 1 || max_steps < 1 || valid_every < 1 || patience < 1)
    throw std::invalid_argument("train-sep: crop_s, batch_size, max_steps, valid_every and "
                                "patience must be positive");
  if (!(grad_clip > 0.0)) throw std::invalid_argument("train-sep: grad_clip must be > 0");
}

namespace {

struct SepExample {
  std::string id;
  Mat mixture;               // L x 1
  std::vector<Mat> sources;  // L x 1 each
};

std::vector<SepExample> LoadSepExamples(const Manifest& manifest, int speakers, size_t min_len) {
  std::vector<SepExample> out;
  for (const auto& e : manifest.entries) {
    MixtureExample ex = LoadExample(manifest, e);
    if (static_cast<int>(ex.sources.size()) != speakers)
      throw std::invalid_argument("train-sep: example " + ex.id + " has " +
                                  std::to_string(ex.sources.size()) + " references, expected " +
                                  std::to_string(speakers));
    const size_t len = std::max(ex.mixture.size(), min_len);
    auto col = [len](const Waveform& w) {
      Mat m = Mat::Zero(static_cast<Eigen::Index>(len), 1);
      for (size_t i = 0; i < w.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = w.samples[i];
      return m;
    };
    SepExample s;
    s.id = ex.id;
    s.mixture = col(ex.mixture);
    for (const auto& src : ex.sources) s.sources.push_back(col(src));
    out.push_back(std::move(s));
  }
  return out;
}

Checkpoint SepSnapshot(const Separator& sep, AdamW& opt, const CspModel* frontend,
                       const nlohmann::json& config, int64_t step, int64_t round, double best) {
  Checkpoint c;
  c.model = "separator";
  c.config = config;
  c.params = CaptureParams(sep.params());
  const auto& entries = sep.params().entries();
  for (size_t i = 0; i < entries.size(); ++i) {
    c.adam_m.emplace_back(entries[i].first, opt.first_moments()[i]);
    c.adam_v.emplace_back(entries[i].first, opt.second_moments()[i]);
  }
  if (frontend)
    for (const auto& [n, v] : frontend->params().entries())
      c.extra.emplace_back("frontend/" + n, v.value());
  c.step = step;
  c.round = round;
  c.best_valid = best;
  return c;
}

}  // namespace

SepTrainResult TrainSeparator(const Manifest& train, const Manifest& valid,
                              const CspModel* frontend, const SeparatorConfig& sep_cfg,
                              const SepTrainConfig& cfg, const nlohmann::json& config_snapshot,
                              const std::filesystem::path& out_dir) {
  cfg.Validate();
  sep_cfg.Validate();
  if (train.entries.empty() || valid.entries.empty())
    throw std::invalid_argument("train-sep: training and validation sets must be non-empty");
  if (sep_cfg.use_frontend && frontend == nullptr)
    throw std::invalid_argument("train-sep: the separator config uses a frontend but none was given");
  const CspModel* fe = sep_cfg.use_frontend ? frontend : nullptr;
  nlohmann::json snapshot = config_snapshot;
  snapshot["separator"] = SeparatorConfigToJson(sep_cfg);
  if (fe) snapshot["model"] = ModelConfigToJson(fe->config());
  const int hop = fe ? fe->config().frontend.Hop() : sep_cfg.enc_stride;
  Separator sep(sep_cfg, fe ? fe->config().frontend.model_dim : 0, hop,
                DeriveSeed(cfg.seed, 0x5e9));

  const int rate = 16000;
  const auto crop = static_cast<size_t>(std::llround(cfg.crop_s * rate)) / hop * hop;
  if (crop < static_cast<size_t>(std::max(hop, sep_cfg.enc_kernel)))
    throw std::invalid_argument("train-sep: crop shorter than one frontend hop");
  auto train_set = LoadSepExamples(train, sep_cfg.speakers, crop);
  auto valid_set = LoadSepExamples(valid, sep_cfg.speakers, 0);

  std::map<std::pair<size_t, size_t>, Var> pattern_cache;
  auto patterns_for = [&](size_t idx, size_t offset, const Var& wave) -> Var {
    auto key = std::make_pair(idx, offset);
    auto it = pattern_cache.find(key);
    if (it != pattern_cache.end()) return it->second;
    NoGradGuard no_grad;
    Var p(fe->Patterns(wave).value());
    pattern_cache.emplace(key, p);
    return p;
  };

  std::ofstream metrics, valid_log;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics.open(out_dir / "sep_metrics.csv");
    valid_log.open(out_dir / "sep_valid.csv");
    metrics << std::setprecision(10) << "step,lr,pit_loss\n";
    valid_log << std::setprecision(10) << "step,round,valid_pit_loss\n";
  }

  AdamW opt(&sep.params(), cfg.weight_decay);
  SepTrainResult result;
  std::vector<size_t> order(train_set.size());
  size_t cursor = order.size();
  int64_t epoch = 0, round = 0, stale = 0;
  double best = std::numeric_limits<double>::infinity();

  for (int64_t step = 1; step <= cfg.max_steps; ++step) {
    std::vector<Var> losses;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle(DeriveSeed(cfg.seed, 0xe9, epoch++));
        std::shuffle(order.begin(), order.end(), shuffle);
        cursor = 0;
      }
      const size_t idx = order[cursor++];
      const auto& ex = train_set[idx];
      Rng crop_rng(DeriveSeed(cfg.seed, static_cast<uint64_t>(step), b));
      const size_t len = static_cast<size_t>(ex.mixture.rows());
      std::uniform_int_distribution<size_t> pick(0, (len - crop) / hop);
      const size_t offset = pick(crop_rng) * hop;
      const auto off = static_cast<Eigen::Index>(offset), n = static_cast<Eigen::Index>(crop);
      Var wave(ex.mixture.middleRows(off, n));
      std::vector<Mat> refs;
      for (const auto& s : ex.sources) refs.push_back(s.middleRows(off, n));
      SeparationOutput out;
      if (fe) {
        Var p = patterns_for(idx, offset, wave);
        out = sep.Forward(wave, &p);
      } else {
        out = sep.Forward(wave, nullptr);
      }
      losses.push_back(PitLoss(out.estimates, refs).loss);
    }
    Var loss = Scale(Sum(ConcatRows(losses)), 1.0 / static_cast<double>(losses.size()));
    if (!std::isfinite(loss.scalar()))
      throw std::runtime_error("train-sep: non-finite loss at step " + std::to_string(step));
    sep.params().ZeroGrad();
    Backward(loss);
    opt.ClipGradNorm(cfg.grad_clip);
    const double lr = LrSchedule(step, cfg.lr, cfg.warmup_steps);
    opt.Step(lr);
    result.train_trace.push_back(loss.scalar());
    if (metrics.is_open()) metrics << step << ',' << lr << ',' << loss.scalar() << '\n';

    if (step % cfg.valid_every == 0 || step == cfg.max_steps) {
      ++round;
      double v = 0.0;
      {
        NoGradGuard no_grad;
        for (const auto& ex : valid_set) {
          Var wave(ex.mixture);
          SeparationOutput out;
          if (fe) {
            Var p = fe->Patterns(wave);
            out = sep.Forward(wave, &p);
          } else {
            out = sep.Forward(wave, nullptr);
          }
          v += PitLoss(out.estimates, ex.sources).loss.scalar();
        }
      }
      v /= static_cast<double>(valid_set.size());
      result.valid_trace.emplace_back(step, v);
      if (valid_log.is_open()) valid_log << step << ',' << round << ',' << v << '\n';
      if (v < best) {
        best = v;
        stale = 0;
        result.best = SepSnapshot(sep, opt, fe, snapshot, step, round, best);
      } else if (++stale >= cfg.patience) {
        result.early_stopped = true;
      }
      result.final = SepSnapshot(sep, opt, fe, snapshot, step, round, best);
      if (result.early_stopped) break;
    }
  }
  if (!out_dir.empty()) {
    SaveCheckpoint(out_dir / "sep_best.ckpt", result.best);
    SaveCheckpoint(out_dir / "sep_final.ckpt", result.final);
  }
  return result;
}

}  // namespace csp
