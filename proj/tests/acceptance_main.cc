// tests/acceptance_main.cc

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


// Acceptance runner. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cli_util.h"
#include "csp/config.h"
#include "csp/metrics.h"
#include "csp/mi_bound.h"
#include "csp/ops.h"
#include "csp/pretext.h"
#include "csp/profiling.h"
#include "csp/quantizer.h"
#include "csp/separation.h"
#include "csp/trainer.h"
#include "test_util.h"

namespace csp {
namespace {

using testing::CheckGradients;
using testing::RandomMat;
using testing::RandomWave;
using testing::TempDir;
using testing::TinyConfig;

struct Outcome {
  bool pass = true;
  std::ostringstream note;

  void Require(bool ok, const std::string& what) {
    if (!ok && pass) note << (note.tellp() > 0 ? "; " : "") << "failed: " << what;
    pass = pass && ok;
  }
};

SeparationSystem TinySystem(bool frontend, uint64_t seed) {
  SeparationSystem sys;
  auto cfg = TinyConfig();
  SeparatorConfig sc = SeparatorConfigFromJson(cfg);
  sc.use_frontend = frontend;
  if (frontend) {
    sys.frontend = std::make_unique<CspModel>(ModelConfigFromJson(cfg), seed);
    const auto& fc = sys.frontend->config().frontend;
    sys.separator = std::make_unique<Separator>(sc, fc.model_dim, fc.Hop(), seed + 1);
  } else {
    sys.separator = std::make_unique<Separator>(sc, 0, 0, seed + 1);
  }
  return sys;
}

double MaxAbs(const Mat& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

// 1. Causality of the frontend patterns and of the separator outputs.
void Causality(Outcome* o) {
  NoGradGuard ng;
  SeparationSystem sys = TinySystem(true, 101);
  Rng rng(102);
  double worst_pat = 0.0, worst_sep = 0.0;
  int checked_frames = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int len = 320 * std::uniform_int_distribution<int>(10, 30)(rng);
    const int n = std::uniform_int_distribution<int>(320, len - 1)(rng);
    Mat x = RandomMat(len, 1, 200 + trial, 0.1);
    Mat y = x;
    y.bottomRows(len - n) += RandomMat(len - n, 1, 300 + trial, 0.2);
    Mat px = sys.frontend->Patterns(Var(x)).value(), py = sys.frontend->Patterns(Var(y)).value();
    const int safe_frames = n / 320;  // frames with (t + 1) * 320 <= n
    checked_frames += safe_frames;
    if (safe_frames > 0)
      worst_pat = std::max(worst_pat, MaxAbs(px.topRows(safe_frames) - py.topRows(safe_frames)));
    auto ex = sys.Separate(Var(x)), ey = sys.Separate(Var(y));
    const int safe = n - 16;
    for (size_t s = 0; s < ex.estimates.size(); ++s)
      worst_sep = std::max(worst_sep, MaxAbs(ex.estimates[s].value().topRows(safe) -
                                             ey.estimates[s].value().topRows(safe)));
    // The perturbation must actually reach later outputs.
    o->Require(MaxAbs(px - py) > 0.0, "perturbation reaches later patterns");
  }
  o->Require(worst_pat <= 1e-6, "pattern frames before the perturbation unchanged");
  o->Require(worst_sep <= 1e-5, "separator outputs before n - 16 unchanged");
  o->note << "20 inputs, " << checked_frames << " pattern frames checked, max change "
          << worst_pat << " (patterns), " << worst_sep << " (outputs)";
}

// 2. Analytic gradients against central differences.
void Gradients(Outcome* o) {
  Rng rng(1);
  const int D = 6, T = 6, R = 4, N = 5;
  ParamStore store;
  QuantizerConfig qc;
  qc.groups = 2;
  qc.entries = R;
  qc.codeword_dim = D;
  qc.in_dim = D;
  qc.out_dim = D;
  GumbelQuantizer q(store, "q", qc, rng);
  LinearLayer bu = LinearLayer::Create(store, "bu", D, D, true, rng);
  LinearLayer ckd = LinearLayer::Create(store, "ckd", 3, D, true, rng);
  ContrastiveOptions opts;
  opts.num_negatives = N;
  Var c(RandomMat(T, D, 2), true), z(RandomMat(T, D, 3), true);

  std::vector<std::pair<std::string, double>> errs;
  errs.emplace_back("td_nce",
                    CheckGradients([&] { return TopDownLoss(c, z, q, 1.0, true, opts, 4).nce; },
                                   {c, store.Get("q.codebook"), store.Get("q.output_proj.weight")})
                        .max_rel_error);
  errs.emplace_back("bu_nce", CheckGradients(
                                  [&] { return BottomUpLoss(c, z, q, bu, 1.0, true, opts, 5).nce; },
                                  {z, bu.weight, bu.bias})
                                  .max_rel_error);
  TeacherCentroids tc;
  tc.centroids = RandomMat(4, 3, 6);
  Mat teacher = RandomMat(T, 3, 7);
  errs.emplace_back("ckd", CheckGradients([&] { return CkdLoss(c, teacher, tc, ckd, opts, 8); },
                                          {c, ckd.weight, ckd.bias})
                               .max_rel_error);
  Var logits(RandomMat(T, 2 * R, 9), true);
  errs.emplace_back("diversity", CheckGradients(
                                     [&] {
                                       Var avg(Mat::Constant(1, T, 1.0 / T));
                                       Var p0 = MatMul(avg, SoftmaxRows(SliceCols(logits, 0, R)));
                                       Var p1 = MatMul(avg, SoftmaxRows(SliceCols(logits, R, R)));
                                       return DiversityLoss(ConcatRows({p0, p1}));
                                     },
                                     {logits})
                                     .max_rel_error);
  Var e0(RandomMat(T, 1, 10), true), e1(RandomMat(T, 1, 11), true);
  std::vector<Mat> refs = {RandomMat(T, 1, 12), RandomMat(T, 1, 13)};
  errs.emplace_back("pit", CheckGradients([&] { return PitLoss({e0, e1}, refs).loss; }, {e0, e1})
                               .max_rel_error);
  for (const auto& [name, e] : errs) {
    o->Require(e < 1e-4, name + " relative error below 1e-4");
    o->note << name << " " << e << " ";
  }
}

// 3. Closed-form values.
void AnalyticValues(Outcome* o) {
  Mat neg = Mat::Zero(100, 3);
  neg.col(1).setOnes();
  CandidateSet cs;
  cs.positive = RowVec::Unit(3, 1);
  cs.negatives = neg;
  const double nce = InfoNce(RowVec::Unit(3, 0), cs, 0.1);
  o->Require(std::abs(nce - std::log(101.0)) <= 1e-5, "uniform InfoNCE = ln 101");
  const double d_uniform = DiversityLossValue(Mat::Constant(2, 8, 0.125));
  Mat one_hot = Mat::Zero(2, 8);
  one_hot(0, 3) = one_hot(1, 6) = 1.0;
  const double d_hot = DiversityLossValue(one_hot);
  Mat toy(1, 2);
  toy << 0.9, 0.1;
  const double d_toy = DiversityLossValue(toy);
  o->Require(std::abs(d_uniform) <= 1e-12 && std::abs(d_hot - 1.0) <= 1e-12,
             "diversity 0 / 1 at uniform / one-hot");
  o->Require(std::abs(d_toy - 0.53100) <= 1e-4, "diversity 0.53100 on (0.9, 0.1)");
  const double t0 = AnnealTemperature(0), tmid = AnnealTemperature(138630),
               tend = AnnealTemperature(2000000);
  o->Require(t0 == 2.0, "temperature 2.0 at step 0");
  o->Require(std::abs(tmid - 1.0) <= 1e-3, "temperature about 1.0 at step 138630");
  o->Require(tend == 0.5, "temperature floor 0.5");
  o->note << "InfoNCE " << nce << ", diversity " << d_uniform << "/" << d_hot << "/" << d_toy
          << ", temperature " << t0 << "/" << tmid << "/" << tend;
}

// 4. Frame counts and ideal latencies.
void ShapeLaw(Outcome* o) {
  NoGradGuard ng;
  const FrontendConfig full;
  o->Require(full.NumFrames(16000) == 50, "default frontend gives 50 frames per second");
  SeparationSystem sys = TinySystem(true, 400);
  Var sec(RandomMat(16000, 1, 401, 0.1));
  const auto pat = sys.frontend->Patterns(sec).rows();
  const auto enc = sys.separator->Encode(sec).rows();
  o->Require(pat == 50, "pattern frames for 1 s");
  o->Require(enc == 1000, "separator encoder frames for 1 s");
  const double with = IdealLatencyMs(sys), without = IdealLatencyMs(TinySystem(false, 402));
  o->Require(with == 20.0 && without == 1.0, "ideal latency 20 ms / 1 ms");
  o->note << full.NumFrames(16000) << " frontend frames (hop " << full.Hop() << "), " << enc
          << " encoder frames, ideal latency " << with << " ms / " << without << " ms";
}

// 5. Information bound on random joints.
void MiBound(Outcome* o) {
  auto rule = [](int, int s1, int s2) { return s1 + s2; };
  Rng rng(500);
  std::uniform_int_distribution<int> size(2, 8);
  int held = 0;
  double worst_chain = 0.0, min_gap = 1e300;
  const int trials = 200;
  for (int i = 0; i < trials; ++i) {
    auto j = DiscreteJoint::Random(size(rng), size(rng), size(rng), DeriveSeed(501, i));
    if (!j.ConditionallyIndependent()) {
      o->Require(false, "generated joint satisfies the premise");
      continue;
    }
    MiBoundReport r = MiBoundCheck(j, rule);
    held += r.holds;
    worst_chain = std::max(worst_chain, std::abs(r.chain_residual));
    min_gap = std::min(min_gap, r.lhs - r.rhs);
  }
  o->Require(held == trials, "lhs >= rhs on every joint");
  o->Require(worst_chain <= 1e-12, "chain identity to 1e-12");
  o->note << held << "/" << trials << " joints hold, min lhs-rhs " << min_gap
          << " bits, max chain residual " << worst_chain;
}

// 6. Overfitting a small corpus.
void OverfitSmoke(Outcome* o) {
  const auto t0 = std::chrono::steady_clock::now();
  TempDir dir("accept_overfit");
  Manifest train = SimulateSyntheticCorpus(dir.path() / "train", 8, 4.0, 16000, {}, 600);
  Manifest valid = SimulateSyntheticCorpus(dir.path() / "valid", 2, 4.0, 16000, {}, 601);
  for (auto& e : valid.entries) e.id = "valid_" + e.id;
  auto cfg = TinyConfig();
  cfg["pretrain"]["crop_s"] = 4.0;
  cfg["pretrain"]["max_steps"] = 300;
  cfg["pretrain"]["valid_every"] = 50;
  cfg["pretrain"]["patience"] = 100;
  cfg["sep_train"]["max_steps"] = 200;
  cfg["sep_train"]["valid_every"] = 50;
  cfg["sep_train"]["patience"] = 100;
  auto teacher = MakeTeacher(cfg);
  PretrainResult pre = Pretrain(train, valid, ModelConfigFromJson(cfg), PretrainConfigFromJson(cfg),
                                teacher.get(), cfg, dir.path() / "pre");
  const auto& tr = pre.train_trace;
  if (tr.size() < 20) {
    o->Require(false, "pretraining ran 300 steps");
    return;
  }
  auto window_mean = [&](size_t end) {
    double s = 0.0;
    for (size_t i = end - 10; i < end; ++i) s += tr[i].total;
    return s / 10.0;
  };
  const double start = window_mean(10), finish = window_mean(tr.size());
  const double drop = 1.0 - finish / start;
  o->Require(tr.size() == 300, "pretraining ran 300 steps");
  o->Require(drop >= 0.5, "total loss falls by at least 50%");

  auto frontend = ModelFromCheckpoint(pre.final);
  const uint64_t hash = frontend->FrontendHash();
  SepTrainResult sep = TrainSeparator(train, valid, frontend.get(), SeparatorConfigFromJson(cfg),
                                      SepTrainConfigFromJson(cfg), cfg, dir.path() / "sep");
  o->Require(frontend->FrontendHash() == hash, "frontend hash unchanged by separator training");
  Checkpoint trained = sep.final;
  SeparationSystem sys = LoadSeparationSystem(trained);
  o->Require(sys.frontend->FrontendHash() == hash, "stored frontend matches the pretrained one");
  auto rows = EvaluateSet(train, SystemSeparator(sys));
  const MetricSummary s = Summarize(rows);
  o->Require(s.scored == 8 && s.mean_si_sdri_db > 3.0, "training-set SI-SDRi above 3 dB");
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o->Require(secs < 900.0, "runtime under 15 min");
  o->note << "total loss " << start << " (steps 1-10) -> " << finish << " (steps "
          << tr.size() - 9 << "-" << tr.size() << "), drop " << 100.0 * drop
          << "%; separator SI-SDRi " << s.mean_si_sdri_db << " dB after "
          << sep.train_trace.size() << " steps; " << secs << " s";
}

double OracleSiSdr(const Mat& est, const Mat& ref) {
  Eigen::VectorXd e = est.col(0).array() - est.mean(), r = ref.col(0).array() - ref.mean();
  const double a = e.dot(r) / r.squaredNorm();
  return std::clamp(10.0 * std::log10((a * r).squaredNorm() / (e - a * r).squaredNorm()), -60.0,
                    60.0);
}

// 7. Permutation search against brute force.
void PitOracle(Outcome* o) {
  double worst = 0.0, worst_inv = 0.0;
  int perm_mismatch = 0;
  for (int toy = 0; toy < 50; ++toy) {
    const int C = toy % 2 ? 3 : 2;
    std::vector<Mat> refs;
    std::vector<Var> ests;
    for (int i = 0; i < C; ++i) refs.push_back(RandomMat(200, 1, 700 + 10 * toy + i));
    for (int i = 0; i < C; ++i)
      ests.emplace_back(Mat(refs[(i + toy) % C] + 0.9 * RandomMat(200, 1, 900 + 10 * toy + i) +
                            0.3 * refs[(i + toy + 1) % C]));
    std::vector<int> perm(C), best;
    std::iota(perm.begin(), perm.end(), 0);
    double best_val = 1e300;
    do {
      double v = 0.0;
      for (int i = 0; i < C; ++i) v -= OracleSiSdr(ests[i].value(), refs[perm[i]]);
      if (v / C < best_val) {
        best_val = v / C;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    PitResult r = PitLoss(ests, refs);
    perm_mismatch += r.perm != best;
    worst = std::max(worst, std::abs(r.loss.scalar() - best_val));
    // Rotate the references; the loss is unchanged and the assignment follows.
    std::vector<Mat> rot(C);
    for (int i = 0; i < C; ++i) rot[(i + 1) % C] = refs[i];
    PitResult rr = PitLoss(ests, rot);
    worst_inv = std::max(worst_inv, std::abs(rr.loss.scalar() - r.loss.scalar()));
    for (int i = 0; i < C; ++i) perm_mismatch += rr.perm[i] != (r.perm[i] + 1) % C;
  }
  o->Require(perm_mismatch == 0, "chosen permutation equals the brute-force argmin");
  o->Require(worst <= 1e-10, "loss equals the brute-force minimum");
  o->Require(worst_inv <= 1e-12, "loss invariant to reference permutation");
  o->note << "50 toys, permutation mismatches " << perm_mismatch << ", max |loss - oracle| "
          << worst << ", max invariance gap " << worst_inv;
}

// 8. Metric properties.
void MetricProperties(Outcome* o) {
  double worst_scale = 0.0;
  for (int i = 0; i < 20; ++i) {
    Waveform s = RandomWave(1000, 800 + i), e = RandomWave(1000, 850 + i);
    for (size_t k = 0; k < e.samples.size(); ++k) e.samples[k] += s.samples[k];
    const double base = SiSdr(e, s);
    for (double g : {0.001, 0.5, 3.0, 1000.0}) {
      Waveform scaled = e;
      for (double& v : scaled.samples) v *= g;
      worst_scale = std::max(worst_scale, std::abs(SiSdr(scaled, s) - base));
    }
  }
  o->Require(worst_scale <= 1e-6, "SI-SDR scale invariance to 1e-6");
  TempDir dir("accept_metrics");
  Manifest m = SimulateSyntheticCorpus(dir.path(), 6, 1.0, 16000, {}, 801);
  auto identity = [](const MixtureExample& ex) {
    return std::vector<Waveform>(ex.sources.size(), ex.mixture);
  };
  auto rows = EvaluateSet(m, identity);
  double worst_id = 0.0;
  for (const auto& r : rows) worst_id = std::max(worst_id, std::abs(r.si_sdri_db));
  o->Require(rows.size() == 6 && Summarize(rows).scored == 6, "all utterances scored");
  o->Require(worst_id <= 1e-9, "identity separator gives SI-SDRi 0");
  std::vector<MetricRow> many;
  for (int i = 0; i < 137; ++i) {
    MetricRow r;
    r.si_sdri_db = 12.0 * std::sin(0.7 * i) + 0.01 * i;
    many.push_back(r);
  }
  int total = 0;
  for (const auto& b : Histogram(many, 0.75)) total += b.count;
  o->Require(total == 137, "histogram conserves rows");
  o->note << "max scale drift " << worst_scale << " dB, max identity SI-SDRi " << worst_id
          << " dB, histogram " << total << "/137";
}

// 9. Chunked inference equals the full pass.
void Streaming(Outcome* o) {
  double worst = 0.0;
  for (bool fe : {true, false}) {
    SeparationSystem sys = TinySystem(fe, 900 + fe);
    Waveform audio = RandomWave(16000, 902);
    std::vector<Mat> full;
    {
      NoGradGuard ng;
      for (const auto& e : sys.Separate(Var(testing::Column(audio))).estimates)
        full.push_back(e.value());
    }
    auto streamed = StreamSeparate(sys, audio, 320);
    for (size_t s = 0; s < full.size(); ++s)
      worst = std::max(worst, MaxAbs(streamed[s] - full[s]));
  }
  o->Require(worst <= 1e-5, "20 ms chunks match the full pass");
  SeparationSystem sys = TinySystem(true, 903);
  ProfileReport r = ProfileStreaming(sys, 20.0, RandomWave(32000, 904));
  const auto j = r.ToJson();
  bool fields = true;
  for (const char* k : {"ideal_latency_ms", "macs_g_per_s", "rtf", "measured_latency_ms",
                        "chunk_ms", "hardware"})
    fields = fields && j.contains(k);
  o->Require(fields && r.rtf > 0.0 && r.measured_latency_ms >= r.ideal_latency_ms &&
                 r.chunks == 100,
             "profile report well formed");
  o->note << "max stream/full difference " << worst << "; RTF " << r.rtf << ", latency "
          << r.measured_latency_ms << " ms on " << r.hardware;
}

// 10. Every subcommand twice with the same seed.
void Reproducibility(Outcome* o) {
  TempDir root("accept_repro");
  const std::string cfg = " --seed 17 --config " + std::string(CSP_TEST_DATA) + "/tiny.toml";
  const std::vector<std::string> steps = {
      "simulate --synth 5 --out data --set simulate.duration_s=1.0",
      "simulate --manifest data/manifest.jsonl --out remix",
      "cluster-teacher --manifest data/manifest.jsonl --out teacher",
      "pretrain --manifest data/manifest.jsonl --out pre --centroids teacher/centroids.arch "
      "--set pretrain.max_steps=6 --set pretrain.valid_every=3",
      "train-sep --manifest data/manifest.jsonl --frontend pre/best.ckpt --out sep "
      "--set sep_train.max_steps=4 --set sep_train.valid_every=2",
      "eval --checkpoint sep/sep_best.ckpt --manifest data/manifest.jsonl --out eval",
      "profile --checkpoint sep/sep_best.ckpt --out profile",
      "profile --out profile_fresh",
      "mi-check --out mi --trials 50",
  };
  for (const char* run : {"a", "b"}) {
    std::filesystem::create_directories(root.path() / run);
    for (const auto& s : steps) {
      testing::CliRun r = testing::RunCli(s + cfg, root.path() / run);
      if (r.code != 0) {
        o->Require(false, "'" + s.substr(0, s.find(' ')) + "' succeeds (" + r.output + ")");
        return;
      }
    }
  }
  const std::string diff = testing::DiffTrees(root.path() / "a", root.path() / "b");
  o->Require(diff.empty(), "identical output trees (" + diff + ")");
  o->note << testing::ListTree(root.path() / "a").size() << " files compared across "
          << steps.size() << " invocations";
}

}  // namespace
}  // namespace csp

int main() {
  using Check = void (*)(csp::Outcome*);
  const std::vector<std::pair<const char*, Check>> criteria = {
      {"causality", csp::Causality},
      {"gradients", csp::Gradients},
      {"analytic values", csp::AnalyticValues},
      {"shape and latency law", csp::ShapeLaw},
      {"information bound", csp::MiBound},
      {"overfit smoke", csp::OverfitSmoke},
      {"permutation oracle", csp::PitOracle},
      {"metric properties", csp::MetricProperties},
      {"streaming equivalence", csp::Streaming},
      {"reproducibility", csp::Reproducibility},
  };
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    csp::Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(&o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.note << " exception: " << e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("%s %2zu %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                secs, o.note.str().c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
