// csp/trainer.h

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

#ifndef CSP_TRAINER_H_
#define CSP_TRAINER_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "csp/data_sim.h"
#include "csp/model.h"
#include "csp/teacher.h"
#include "json.hpp"

namespace csp {

struct PretrainConfig {
  double lr = 5e-4;
  double weight_decay = 0.01;
  int64_t warmup_steps = 32000;
  double dropout = 0.1;
  double layerdrop = 0.05;
  double crop_s = 15.6;
  int patience = 50;  // validation rounds without improvement
  uint64_t seed = 0;
  LossSettings loss;
  int batch_size = 2;
  int64_t max_steps = 100000;
  int64_t valid_every = 1000;
  double grad_clip = 10.0;
  int teacher_clusters = 100;
  double tau_start = 2.0;
  double tau_floor = 0.5;
  double tau_decay = 0.999995;

  void Validate() const;
};

/// Linear warm-up to `peak` over `warmup` steps, then peak * sqrt(warmup / step).
double LrSchedule(int64_t step, double peak, int64_t warmup);
inline double LrSchedule(int64_t step, const PretrainConfig& cfg) {
  return LrSchedule(step, cfg.lr, cfg.warmup_steps);
}

/// Adam with decoupled weight decay over every parameter of a store.
class AdamW {
 public:
  AdamW(ParamStore* store, double weight_decay, double beta1 = 0.9, double beta2 = 0.98,
        double eps = 1e-8);
  /// Scales gradients so their global L2 norm is at most `max_norm`; returns
  /// the norm before clipping.
  double ClipGradNorm(double max_norm);
  void Step(double lr);

  int64_t steps() const { return t_; }
  std::vector<Mat>& first_moments() { return m_; }
  std::vector<Mat>& second_moments() { return v_; }
  void set_steps(int64_t t) { t_ = t; }

 private:
  ParamStore* store_;
  double wd_, b1_, b2_, eps_;
  int64_t t_ = 0;
  std::vector<Mat> m_, v_;
};

inline constexpr char kCheckpointKind[] = "csp-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  int format_version = kCheckpointVersion;
  std::string model;  // "frontend" or "separator"
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::pair<std::string, Mat>> params;
  std::vector<std::pair<std::string, Mat>> adam_m;
  std::vector<std::pair<std::string, Mat>> adam_v;
  /// Arrays that are not trained (e.g. teacher centroids, a frozen frontend).
  std::vector<std::pair<std::string, Mat>> extra;
  int64_t step = 0;
  int64_t round = 0;
  double best_valid = 0.0;

  const Mat* FindExtra(const std::string& name) const;
};

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

std::vector<std::pair<std::string, Mat>> CaptureParams(const ParamStore& store);
/// Copies values by name; every store parameter must be present with its shape.
void RestoreParams(ParamStore* store, const std::vector<std::pair<std::string, Mat>>& arrays);

/// Training examples held in memory with their teacher frames.
struct PretrainExample {
  std::string id;
  Waveform wave;  // right-padded to at least the crop length
  Mat teacher;    // frames aligned to the frontend hop; may be empty
};

std::vector<PretrainExample> LoadPretrainExamples(const Manifest& manifest, const Teacher* teacher,
                                                  int hop, double min_duration_s);

struct PretrainResult {
  std::vector<LossReport> train_trace;  // one per step
  std::vector<std::pair<int64_t, double>> valid_trace;
  Checkpoint best;
  Checkpoint final;
  TeacherCentroids centroids;
  bool early_stopped = false;
};

/// Runs pretraining. When `out_dir` is non-empty it receives metrics.csv,
/// valid.csv, best.ckpt and final.ckpt. `centroids` may be supplied (e.g. from
/// a cluster-teacher run); otherwise they are fitted on the training teacher
/// frames when gamma > 0.
PretrainResult Pretrain(const Manifest& train, const Manifest& valid,
                        const CspModelConfig& model_cfg, const PretrainConfig& cfg,
                        const Teacher* teacher, const nlohmann::json& config_snapshot,
                        const std::filesystem::path& out_dir,
                        const std::optional<TeacherCentroids>& centroids = std::nullopt);

/// Mean eval-mode loss over a set (fixed seeds, no dropout or Gumbel noise).
LossReport ValidationLoss(const CspModel& model, const std::vector<PretrainExample>& set,
                          const TeacherCentroids* centroids, const PretrainConfig& cfg,
                          int64_t step);

/// Rebuilds a CspModel from the "model" section of a checkpoint's config and
/// its parameter arrays.
std::unique_ptr<CspModel> ModelFromCheckpoint(const Checkpoint& ckpt);

}  // namespace csp

#endif  // CSP_TRAINER_H_
