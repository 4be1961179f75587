// src/trainer.cc

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

#include "csp/trainer.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "csp/archive.h"
#include "csp/config.h"

namespace csp {

void PretrainConfig::Validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("pretrain: lr must be > 0");
  if (weight_decay < 0.0) throw std::invalid_argument("pretrain: weight_decay must be >= 0");
  if (warmup_steps < 0) throw std::invalid_argument("pretrain: warmup_steps must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0 || layerdrop < 0.0 || layerdrop >= 1.0)
    throw std::invalid_argument("pretrain: dropout rates must lie in [0, 1)");
  if (!(crop_s > 0.0)) throw std::invalid_argument("pretrain: crop_s must be > 0");
  if (patience < 1) throw std::invalid_argument("pretrain: patience must be >= 1");
  if (batch_size < 1 || max_steps < 1 || valid_every < 1)
    throw std::invalid_argument("pretrain: batch_size, max_steps and valid_every must be >= 1");
  if (!(grad_clip > 0.0)) throw std::invalid_argument("pretrain: grad_clip must be > 0");
  if (teacher_clusters < 2) throw std::invalid_argument("pretrain: teacher_clusters must be >= 2");
  if (!(tau_start > 0.0) || !(tau_floor > 0.0) || !(tau_decay > 0.0 && tau_decay <= 1.0))
    throw std::invalid_argument("pretrain: invalid temperature schedule");
  const auto& w = loss.weights;
  if (w.alpha < 0.0 || w.beta < 0.0 || w.gamma < 0.0)
    throw std::invalid_argument("pretrain: loss weights must be >= 0");
  if (!(loss.contrastive.temperature > 0.0) || loss.contrastive.num_negatives < 1)
    throw std::invalid_argument("pretrain: need temperature > 0 and num_negatives >= 1");
}

double LrSchedule(int64_t step, double peak, int64_t warmup) {
  if (step < 0) throw std::invalid_argument("lr_schedule: step must be >= 0");
  if (warmup <= 0) return peak;
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  return peak * std::sqrt(static_cast<double>(warmup) / static_cast<double>(step));
}

AdamW::AdamW(ParamStore* store, double weight_decay, double beta1, double beta2, double eps)
    : store_(store), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& [name, v] : store_->entries()) {
    m_.push_back(Mat::Zero(v.rows(), v.cols()));
    v_.push_back(Mat::Zero(v.rows(), v.cols()));
  }
}

double AdamW::ClipGradNorm(double max_norm) {
  double sq = 0.0;
  for (const auto& [name, v] : store_->entries())
    if (v.requires_grad()) sq += v.grad().squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (auto& [name, v] : store_->entries())
      if (v.requires_grad() && v.node()->grad.size() != 0) v.node()->grad *= s;
  }
  return norm;
}

void AdamW::Step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  auto& entries = store_->entries();
  for (size_t i = 0; i < entries.size(); ++i) {
    Var& p = entries[i].second;
    if (!p.requires_grad()) continue;
    const Mat& g = p.grad();
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
    Mat& w = p.mutable_value();
    w.array() -= lr * ((m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_) +
                       wd_ * w.array());
  }
}

const Mat* Checkpoint::FindExtra(const std::string& name) const {
  for (const auto& [n, m] : extra)
    if (n == name) return &m;
  return nullptr;
}

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  NamedArrays a;
  a.kind = kCheckpointKind;
  a.format_version = ckpt.format_version;
  a.meta["model"] = ckpt.model;
  a.meta["config"] = ckpt.config;
  a.meta["step"] = ckpt.step;
  a.meta["round"] = ckpt.round;
  a.meta["best_valid"] = ckpt.best_valid;
  for (const auto& [n, m] : ckpt.params) a.arrays.emplace_back("param/" + n, m);
  for (const auto& [n, m] : ckpt.adam_m) a.arrays.emplace_back("adam_m/" + n, m);
  for (const auto& [n, m] : ckpt.adam_v) a.arrays.emplace_back("adam_v/" + n, m);
  for (const auto& [n, m] : ckpt.extra) a.arrays.emplace_back("extra/" + n, m);
  WriteArchive(path, a);
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  NamedArrays a = ReadArchive(path, kCheckpointKind, kCheckpointVersion);
  Checkpoint c;
  c.format_version = a.format_version;
  try {
    c.model = a.meta.at("model").get<std::string>();
    c.config = a.meta.at("config");
    c.step = a.meta.at("step").get<int64_t>();
    c.round = a.meta.at("round").get<int64_t>();
    c.best_valid = a.meta.at("best_valid").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(ArchiveError::Code::kCorrupt,
                       "corrupt checkpoint " + path.string() + ": " + e.what());
  }
  for (auto& [name, m] : a.arrays) {
    const auto slash = name.find('/');
    const std::string group = name.substr(0, slash), key = name.substr(slash + 1);
    if (group == "param") c.params.emplace_back(key, std::move(m));
    else if (group == "adam_m") c.adam_m.emplace_back(key, std::move(m));
    else if (group == "adam_v") c.adam_v.emplace_back(key, std::move(m));
    else if (group == "extra") c.extra.emplace_back(key, std::move(m));
    else
      throw ArchiveError(ArchiveError::Code::kCorrupt,
                         "corrupt checkpoint " + path.string() + ": stray array " + name);
  }
  return c;
}

std::vector<std::pair<std::string, Mat>> CaptureParams(const ParamStore& store) {
  std::vector<std::pair<std::string, Mat>> out;
  for (const auto& [n, v] : store.entries()) out.emplace_back(n, v.value());
  return out;
}

void RestoreParams(ParamStore* store, const std::vector<std::pair<std::string, Mat>>& arrays) {
  for (auto& [name, v] : store->entries()) {
    auto it = std::find_if(arrays.begin(), arrays.end(),
                           [&](const auto& a) { return a.first == name; });
    if (it == arrays.end()) throw std::invalid_argument("checkpoint lacks parameter " + name);
    if (it->second.rows() != v.rows() || it->second.cols() != v.cols())
      throw std::invalid_argument("checkpoint shape mismatch for parameter " + name);
    v.mutable_value() = it->second;
  }
}

std::unique_ptr<CspModel> ModelFromCheckpoint(const Checkpoint& ckpt) {
  auto model = std::make_unique<CspModel>(ModelConfigFromJson(ckpt.config), 0);
  RestoreParams(&model->params(), ckpt.params);
  return model;
}

std::vector<PretrainExample> LoadPretrainExamples(const Manifest& manifest, const Teacher* teacher,
                                                  int hop, double min_duration_s) {
  std::vector<PretrainExample> out;
  for (const auto& e : manifest.entries) {
    MixtureExample ex = LoadExample(manifest, e);
    PretrainExample p;
    p.id = ex.id;
    p.wave = ex.mixture;
    const auto need = static_cast<size_t>(std::llround(min_duration_s * p.wave.sample_rate));
    if (p.wave.samples.size() < need) p.wave.samples.resize(need, 0.0);
    const auto frames = static_cast<int>(p.wave.samples.size() / hop);
    if (frames < 2)
      throw std::invalid_argument("pretrain: example " + p.id + " is shorter than two frames");
    if (teacher) p.teacher = teacher->Frames(p.id, p.wave, frames);
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

double Tau(const PretrainConfig& cfg, int64_t step) {
  return AnnealTemperature(step, cfg.tau_start, cfg.tau_floor, cfg.tau_decay);
}

void WriteReportRow(std::ostream& os, int64_t step, double lr, const LossReport& r) {
  os << step << ',' << lr << ',' << r.td_nce << ',' << r.td_div << ',' << r.bu_nce << ','
     << r.bu_div << ',' << r.ckd << ',' << r.total << '\n';
}

Checkpoint Snapshot(const CspModel& model, AdamW& opt, const nlohmann::json& config,
                    const TeacherCentroids* centroids, int64_t step, int64_t round,
                    double best_valid) {
  Checkpoint c;
  c.model = "frontend";
  c.config = config;
  c.params = CaptureParams(model.params());
  const auto& entries = model.params().entries();
  for (size_t i = 0; i < entries.size(); ++i) {
    c.adam_m.emplace_back(entries[i].first, opt.first_moments()[i]);
    c.adam_v.emplace_back(entries[i].first, opt.second_moments()[i]);
  }
  if (centroids && centroids->centroids.size() > 0)
    c.extra.emplace_back("teacher_centroids", centroids->centroids);
  c.step = step;
  c.round = round;
  c.best_valid = best_valid;
  return c;
}

}  // namespace

LossReport ValidationLoss(const CspModel& model, const std::vector<PretrainExample>& set,
                          const TeacherCentroids* centroids, const PretrainConfig& cfg,
                          int64_t step) {
  NoGradGuard no_grad;
  std::vector<StepLoss> parts;
  const int hop = model.config().frontend.Hop();
  for (size_t i = 0; i < set.size(); ++i) {
    const auto& ex = set[i];
    const uint64_t seed = DeriveSeed(cfg.seed, 0x5a11d, i);
    const auto n = static_cast<Eigen::Index>(ex.wave.size() / hop * hop);
    Var wave = SliceRows(WaveformColumn(ex.wave, hop), 0, n);
    MaskedForward fwd = model.Forward(wave, false, seed);
    parts.push_back(model.Loss(fwd, ex.teacher.size() ? &ex.teacher : nullptr, centroids,
                               cfg.loss, Tau(cfg, step), false, seed));
  }
  return MeanLoss(parts).report;
}

PretrainResult Pretrain(const Manifest& train, const Manifest& valid,
                        const CspModelConfig& model_cfg_in, const PretrainConfig& cfg,
                        const Teacher* teacher, const nlohmann::json& config_snapshot,
                        const std::filesystem::path& out_dir,
                        const std::optional<TeacherCentroids>& given_centroids) {
  cfg.Validate();
  if (train.entries.empty()) throw std::invalid_argument("pretrain: empty training set");
  if (valid.entries.empty()) throw std::invalid_argument("pretrain: empty validation set");
  for (const auto& v : valid.entries)
    for (const auto& t : train.entries)
      if (v.id == t.id && valid.Resolve(v.mixture_path) == train.Resolve(t.mixture_path))
        throw std::invalid_argument("pretrain: validation entry " + v.id +
                                    " also appears in the training set");
  const bool use_ckd = cfg.loss.weights.gamma > 0.0;
  if (use_ckd && teacher == nullptr)
    throw std::invalid_argument("pretrain: gamma > 0 requires a teacher");

  CspModelConfig model_cfg = model_cfg_in;
  model_cfg.frontend.dropout = cfg.dropout;
  model_cfg.frontend.layerdrop = cfg.layerdrop;
  if (use_ckd) model_cfg.teacher_dim = teacher->dim();
  CspModel model(model_cfg, DeriveSeed(cfg.seed, 0x1417));
  nlohmann::json snapshot = config_snapshot;
  snapshot["model"] = ModelConfigToJson(model_cfg);
  const int hop = model_cfg.frontend.Hop();

  auto train_set = LoadPretrainExamples(train, use_ckd ? teacher : nullptr, hop, cfg.crop_s);
  auto valid_set = LoadPretrainExamples(valid, use_ckd ? teacher : nullptr, hop, 0.0);

  PretrainResult result;
  TeacherCentroids centroids;
  if (use_ckd) {
    if (given_centroids) {
      centroids = *given_centroids;
      if (centroids.centroids.cols() != teacher->dim())
        throw std::invalid_argument("pretrain: centroid dimension differs from the teacher's");
    } else {
      std::vector<Mat> frames;
      for (const auto& ex : train_set) frames.push_back(ex.teacher);
      centroids = FitTeacherCentroids(frames, cfg.teacher_clusters, DeriveSeed(cfg.seed, 0xc1));
    }
  }
  result.centroids = centroids;
  const TeacherCentroids* cent = use_ckd ? &centroids : nullptr;

  std::ofstream metrics, valid_log;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics.open(out_dir / "metrics.csv");
    valid_log.open(out_dir / "valid.csv");
    metrics << std::setprecision(10) << "step,lr,td_nce,td_div,bu_nce,bu_div,ckd,total\n";
    valid_log << std::setprecision(10) << "step,round,valid_total\n";
  }

  AdamW opt(&model.params(), cfg.weight_decay);
  const auto crop = static_cast<size_t>(std::llround(cfg.crop_s * train_set[0].wave.sample_rate));
  const int crop_frames = static_cast<int>(crop / hop);
  if (crop_frames < 2) throw std::invalid_argument("pretrain: crop shorter than two frames");

  std::vector<size_t> order(train_set.size());
  size_t cursor = order.size();
  int64_t epoch = 0;
  double best = std::numeric_limits<double>::infinity();
  int64_t round = 0, stale = 0;

  for (int64_t step = 1; step <= cfg.max_steps; ++step) {
    std::vector<StepLoss> parts;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle(DeriveSeed(cfg.seed, 0xe9, epoch++));
        std::shuffle(order.begin(), order.end(), shuffle);
        cursor = 0;
      }
      const auto& ex = train_set[order[cursor++]];
      const uint64_t seed = DeriveSeed(cfg.seed, static_cast<uint64_t>(step), b);
      Rng crop_rng(DeriveSeed(seed, 0xc0));
      const size_t max_frame_offset = (ex.wave.size() - crop) / hop;
      std::uniform_int_distribution<size_t> pick(0, max_frame_offset);
      const size_t frame_offset = pick(crop_rng);
      Mat col(static_cast<Eigen::Index>(crop_frames) * hop, 1);
      for (Eigen::Index i = 0; i < col.rows(); ++i)
        col(i, 0) = ex.wave.samples[frame_offset * hop + static_cast<size_t>(i)];
      MaskedForward fwd = model.Forward(Var(std::move(col)), true, seed);
      Mat tframes;
      if (use_ckd) tframes = ex.teacher.middleRows(static_cast<Eigen::Index>(frame_offset), crop_frames);
      parts.push_back(model.Loss(fwd, use_ckd ? &tframes : nullptr, cent, cfg.loss,
                                 Tau(cfg, step), true, seed));
    }
    StepLoss loss = MeanLoss(parts);
    if (!std::isfinite(loss.total.scalar()))
      throw std::runtime_error("pretrain: non-finite loss at step " + std::to_string(step));
    model.params().ZeroGrad();
    Backward(loss.total);
    opt.ClipGradNorm(cfg.grad_clip);
    const double lr = LrSchedule(step, cfg);
    opt.Step(lr);
    result.train_trace.push_back(loss.report);
    if (metrics.is_open()) WriteReportRow(metrics, step, lr, loss.report);

    if (step % cfg.valid_every == 0 || step == cfg.max_steps) {
      ++round;
      const double v = ValidationLoss(model, valid_set, cent, cfg, step).total;
      if (!std::isfinite(v))
        throw std::runtime_error("pretrain: non-finite validation loss at step " +
                                 std::to_string(step));
      result.valid_trace.emplace_back(step, v);
      if (valid_log.is_open()) valid_log << step << ',' << round << ',' << v << '\n';
      if (v < best) {
        best = v;
        stale = 0;
        result.best = Snapshot(model, opt, snapshot, cent, step, round, best);
      } else if (++stale >= cfg.patience) {
        result.early_stopped = true;
      }
      result.final = Snapshot(model, opt, snapshot, cent, step, round, best);
      if (result.early_stopped) break;
    }
  }
  if (!out_dir.empty()) {
    SaveCheckpoint(out_dir / "best.ckpt", result.best);
    SaveCheckpoint(out_dir / "final.ckpt", result.final);
  }
  return result;
}

}  // namespace csp
