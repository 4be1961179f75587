// tools/csp_main.cc

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

// Command-line entry point: simulate, pretrain, cluster-teacher, train-sep,
// eval, profile and mi-check.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "csp/archive.h"
#include "csp/config.h"
#include "csp/data_sim.h"
#include "csp/metrics.h"
#include "csp/mi_bound.h"
#include "csp/profiling.h"
#include "csp/separation.h"
#include "csp/teacher.h"
#include "csp/trainer.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kCentroidKind[] = "csp-centroids";
constexpr int kCentroidVersion = 1;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string seed;
  std::string out_dir;
  int workers = 1;
};

void AddCommon(CLI::App* cmd, CommonOptions* o, bool out_required) {
  cmd->add_option("--config", o->config_path, "Config file (TOML subset)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", o->overrides, "Override a config value: dotted.key=value")
      ->take_all();
  cmd->add_option("--seed", o->seed, "Random seed (falls back to $CSP_SEED, then config)");
  auto* out = cmd->add_option("--out", o->out_dir, "Output directory");
  if (out_required) out->required();
  cmd->add_option("--workers", o->workers, "Worker threads (computation is single-threaded)")
      ->check(CLI::PositiveNumber);
}

/// Defaults, then the config file, then --set overrides, then the seed.
json EffectiveConfig(const CommonOptions& o) {
  json cfg = csp::DefaultConfig();
  if (!o.config_path.empty()) csp::MergeConfig(&cfg, csp::LoadConfigFile(o.config_path));
  for (const auto& s : o.overrides) csp::ApplyOverride(&cfg, s);
  std::string seed = o.seed;
  if (seed.empty()) {
    if (const char* env = std::getenv("CSP_SEED")) seed = env;
  }
  if (!seed.empty()) {
    size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(seed, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != seed.size() || seed.empty())
      throw std::invalid_argument("seed '" + seed + "' is not a non-negative integer");
    cfg["seed"] = v;
  }
  return cfg;
}

void EchoConfig(const json& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream(out_dir / "effective_config.json") << csp::CanonicalText(cfg);
}

void WriteJson(const fs::path& path, const json& j) { std::ofstream(path) << j.dump(2) << "\n"; }

csp::GainConfig Gains(const json& cfg) {
  return {cfg["simulate"]["gain_lo_db"].get<double>(), cfg["simulate"]["gain_hi_db"].get<double>()};
}

/// Splits off a validation manifest when none was given: the last
/// max(1, round(10%)) entries in id order.
void SplitValidation(csp::Manifest* train, csp::Manifest* valid) {
  if (train->entries.size() < 2)
    throw std::invalid_argument("need at least 2 entries to hold out a validation split "
                                "(or pass --valid-manifest)");
  const size_t n = train->entries.size();
  const size_t k = std::max<size_t>(1, static_cast<size_t>(std::llround(0.1 * n)));
  valid->base_dir = train->base_dir;
  valid->entries.assign(train->entries.end() - static_cast<long>(k), train->entries.end());
  train->entries.resize(n - k);
}

// ---------------------------------------------------------------------------

struct SimulateOptions {
  std::string manifest;
  int synth = 0;
};

int RunSimulate(const CommonOptions& o, const SimulateOptions& s) {
  json cfg = EffectiveConfig(o);
  const fs::path out(o.out_dir);
  EchoConfig(cfg, out);
  const uint64_t seed = cfg["seed"].get<uint64_t>();
  csp::Manifest m;
  if (!s.manifest.empty()) {
    m = csp::SimulateFromManifest(csp::ReadManifest(s.manifest), out, Gains(cfg), seed);
  } else {
    const int count = s.synth > 0 ? s.synth : cfg["simulate"]["count"].get<int>();
    m = csp::SimulateSyntheticCorpus(out, count, cfg["simulate"]["duration_s"].get<double>(),
                                     cfg["simulate"]["sample_rate"].get<int>(), Gains(cfg), seed);
  }
  std::cout << "simulated " << m.entries.size() << " mixtures into " << out.string() << "\n";
  return 0;
}

struct PretrainOptions {
  std::string manifest;
  std::string valid_manifest;
  std::string centroids;
};

int RunPretrain(const CommonOptions& o, const PretrainOptions& p) {
  json cfg = EffectiveConfig(o);
  const fs::path out(o.out_dir);
  EchoConfig(cfg, out);
  csp::Manifest train = csp::ReadManifest(p.manifest), valid;
  if (p.valid_manifest.empty()) SplitValidation(&train, &valid);
  else valid = csp::ReadManifest(p.valid_manifest);

  const csp::PretrainConfig pc = csp::PretrainConfigFromJson(cfg);
  const csp::CspModelConfig mc = csp::ModelConfigFromJson(cfg);
  std::unique_ptr<csp::Teacher> teacher;
  if (pc.loss.weights.gamma > 0.0) teacher = csp::MakeTeacher(cfg);
  std::optional<csp::TeacherCentroids> centroids;
  if (!p.centroids.empty()) {
    auto a = csp::ReadArchive(p.centroids, kCentroidKind, kCentroidVersion);
    centroids = csp::TeacherCentroids{a.Get("centroids")};
  }
  auto result = csp::Pretrain(train, valid, mc, pc, teacher.get(), cfg, out, centroids);
  const auto& last = result.train_trace.back();
  std::cout << "pretrained " << result.train_trace.size() << " steps; final total "
            << last.total << "; best validation " << result.best.best_valid << "\n";
  return 0;
}

struct ClusterOptions {
  std::string manifest;
};

int RunClusterTeacher(const CommonOptions& o, const ClusterOptions& c) {
  json cfg = EffectiveConfig(o);
  const fs::path out(o.out_dir);
  EchoConfig(cfg, out);
  csp::Manifest m = csp::ReadManifest(c.manifest);
  auto teacher = csp::MakeTeacher(cfg);
  const int hop = csp::ModelConfigFromJson(cfg).frontend.Hop();
  std::map<std::string, csp::Mat> frames;
  std::vector<csp::Mat> all;
  for (const auto& e : m.entries) {
    csp::MixtureExample ex = csp::LoadExample(m, e);
    const int T = static_cast<int>(ex.mixture.size() / hop);
    if (T < 1) throw std::invalid_argument("entry " + e.id + " is shorter than one frame");
    frames[e.id] = teacher->Frames(e.id, ex.mixture, T);
    all.push_back(frames[e.id]);
  }
  csp::WriteTeacherFile(out / "teacher.arch", frames, 16000.0 / hop);
  std::vector<double> trace;
  auto tc = csp::FitTeacherCentroids(all, cfg["teacher"]["clusters"].get<int>(),
                                     csp::DeriveSeed(cfg["seed"].get<uint64_t>(), 0xc1), 100,
                                     &trace);
  csp::NamedArrays a;
  a.kind = kCentroidKind;
  a.format_version = kCentroidVersion;
  a.meta["objective_trace"] = trace;
  a.arrays.emplace_back("centroids", tc.centroids);
  csp::WriteArchive(out / "centroids.arch", a);
  std::cout << "clustered " << all.size() << " utterances into " << tc.num_clusters()
            << " centroids; objective " << trace.back() << "\n";
  return 0;
}

struct TrainSepOptions {
  std::string manifest;
  std::string valid_manifest;
  std::string frontend;
};

int RunTrainSep(const CommonOptions& o, const TrainSepOptions& t) {
  json cfg = EffectiveConfig(o);
  const fs::path out(o.out_dir);
  EchoConfig(cfg, out);
  csp::Manifest train = csp::ReadManifest(t.manifest), valid;
  if (t.valid_manifest.empty()) SplitValidation(&train, &valid);
  else valid = csp::ReadManifest(t.valid_manifest);
  const csp::SeparatorConfig sc = csp::SeparatorConfigFromJson(cfg);
  std::unique_ptr<csp::CspModel> frontend;
  if (sc.use_frontend) {
    if (t.frontend.empty())
      throw std::invalid_argument("separator.use_frontend is true; pass --frontend CKPT");
    csp::Checkpoint ck = csp::LoadCheckpoint(t.frontend);
    if (ck.model != "frontend")
      throw std::invalid_argument(t.frontend + " is not a frontend checkpoint");
    frontend = csp::ModelFromCheckpoint(ck);
  }
  const uint64_t before = frontend ? frontend->FrontendHash() : 0;
  auto result = csp::TrainSeparator(train, valid, frontend.get(), sc,
                                    csp::SepTrainConfigFromJson(cfg), cfg, out);
  if (frontend && frontend->FrontendHash() != before)
    throw std::logic_error("frontend parameters changed during separator training");
  std::cout << "trained separator for " << result.train_trace.size()
            << " steps; best validation PIT loss " << result.best.best_valid << "\n";
  return 0;
}

struct EvalOptions {
  std::string checkpoint;
  std::string manifest;
  bool write_audio = true;
};

int RunEval(const CommonOptions& o, const EvalOptions& e) {
  json cfg = EffectiveConfig(o);
  const fs::path out(o.out_dir);
  EchoConfig(cfg, out);
  csp::SeparationSystem sys = csp::LoadSeparationSystem(csp::LoadCheckpoint(e.checkpoint));
  csp::Manifest m = csp::ReadManifest(e.manifest);
  auto separate = csp::SystemSeparator(sys);
  csp::SeparateFn fn = separate;
  if (e.write_audio) {
    fs::create_directories(out / "separated");
    fn = [&](const csp::MixtureExample& ex) {
      auto est = separate(ex);
      for (size_t i = 0; i < est.size(); ++i)
        csp::WriteWav(out / "separated" / (ex.id + "_spk" + std::to_string(i + 1) + ".wav"),
                      est[i]);
      return est;
    };
  }
  auto rows = csp::EvaluateSet(m, fn);
  csp::WriteMetricsCsv(out / "metrics.csv", rows);
  csp::WriteHistogramCsv(out / "histogram.csv",
                         csp::Histogram(rows, cfg["eval"]["bin_width_db"].get<double>()));
  const auto s = csp::Summarize(rows);
  WriteJson(out / "summary.json", {{"mean_si_sdri_db", s.mean_si_sdri_db},
                                   {"mean_sdri_db", s.mean_sdri_db},
                                   {"scored", s.scored},
                                   {"failed", s.failed}});
  std::cout << "evaluated " << rows.size() << " utterances; mean SI-SDRi " << s.mean_si_sdri_db
            << " dB, mean SDRi " << s.mean_sdri_db << " dB\n";
  for (const auto& r : rows)
    if (!r.error.empty()) std::cerr << "warning: eval: " << r.id << ": " << r.error << "\n";
  return s.scored > 0 ? 0 : 1;
}

struct ProfileOptions {
  std::string checkpoint;
  std::string audio;
  double chunk_ms = 0.0;
};

int RunProfile(const CommonOptions& o, const ProfileOptions& p) {
  json cfg = EffectiveConfig(o);
  const fs::path out(o.out_dir);
  EchoConfig(cfg, out);
  const uint64_t seed = cfg["seed"].get<uint64_t>();
  csp::SeparationSystem sys;
  if (!p.checkpoint.empty()) {
    sys = csp::LoadSeparationSystem(csp::LoadCheckpoint(p.checkpoint));
  } else {
    const auto sc = csp::SeparatorConfigFromJson(cfg);
    int dim = 0, hop = 0;
    if (sc.use_frontend) {
      sys.frontend = std::make_unique<csp::CspModel>(csp::ModelConfigFromJson(cfg),
                                                     csp::DeriveSeed(seed, 0x1417));
      dim = sys.frontend->config().frontend.model_dim;
      hop = sys.frontend->config().frontend.Hop();
    }
    sys.separator = std::make_unique<csp::Separator>(sc, dim, hop, csp::DeriveSeed(seed, 0x5e9));
  }
  csp::Waveform audio;
  if (!p.audio.empty()) {
    audio = csp::ReadWav(p.audio);
  } else {
    audio = csp::SynthesizeVoice({}, cfg["profile"]["seconds"].get<double>(), 16000, seed);
  }
  const double chunk_ms = p.chunk_ms > 0.0 ? p.chunk_ms : cfg["profile"]["chunk_ms"].get<double>();
  csp::ProfileReport r = csp::ProfileStreaming(sys, chunk_ms, audio);
  WriteJson(out / "profile.json", r.ToJson());
  std::cout << r.ToJson().dump() << "\n";
  return 0;
}

struct MiOptions {
  int trials = 100;
  int alphabet = 4;
  std::string joint;
};

int RunMiCheck(const CommonOptions& o, const MiOptions& m) {
  json cfg = EffectiveConfig(o);
  const fs::path out(o.out_dir);
  EchoConfig(cfg, out);
  // The context variable defaults to the mixture value itself.
  const csp::ContextRule rule = [](int, int s1, int s2) { return s1 + s2; };
  std::vector<csp::DiscreteJoint> joints;
  if (!m.joint.empty()) {
    std::ifstream in(m.joint);
    if (!in) throw std::runtime_error("cannot read " + m.joint);
    json j = json::parse(in);
    csp::DiscreteJoint d;
    d.nc = j.at("nc").get<int>();
    d.n1 = j.at("n1").get<int>();
    d.n2 = j.at("n2").get<int>();
    d.p = j.at("p").get<std::vector<double>>();
    joints.push_back(d);
  } else {
    if (m.alphabet < 1 || m.alphabet > 16)
      throw std::invalid_argument("--alphabet must lie in [1, 16]");
    const uint64_t seed = cfg["seed"].get<uint64_t>();
    for (int i = 0; i < m.trials; ++i) {
      std::mt19937_64 pick(csp::DeriveSeed(seed, 0x3141, i));
      std::uniform_int_distribution<int> size(1, m.alphabet);
      const int nc = size(pick), n1 = size(pick), n2 = size(pick);
      joints.push_back(csp::DiscreteJoint::Random(nc, n1, n2, csp::DeriveSeed(seed, 0x2718, i)));
    }
  }
  json reports = json::array();
  bool all_hold = true;
  double max_residual = 0.0;
  for (const auto& j : joints) {
    auto r = csp::MiBoundCheck(j, rule);
    json row = r.ToJson();
    row["alphabets"] = {j.nc, j.n1, j.n2};
    reports.push_back(row);
    if (r.premise) all_hold = all_hold && r.holds;
    max_residual = std::max(max_residual, std::abs(r.chain_residual));
  }
  WriteJson(out / "mi_report.json", {{"trials", reports.size()},
                                     {"bound_holds_under_premise", all_hold},
                                     {"max_chain_residual_bits", max_residual},
                                     {"reports", reports}});
  std::cout << "mi-check: " << reports.size() << " joints; bound holds under premise: "
            << (all_hold ? "yes" : "no") << "; max chain residual " << max_residual << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal self-supervised frontend and separator toolkit", "csp"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  CommonOptions common;
  SimulateOptions sim;
  PretrainOptions pre;
  ClusterOptions clu;
  TrainSepOptions tsep;
  EvalOptions ev;
  ProfileOptions prof;
  MiOptions mi;

  auto* c_sim = app.add_subcommand("simulate", "Mix sources into a two-speaker corpus");
  AddCommon(c_sim, &common, true);
  c_sim->add_option("--manifest", sim.manifest, "Manifest listing source_paths to mix")
      ->check(CLI::ExistingFile);
  c_sim->add_option("--synth", sim.synth, "Generate N synthetic mixtures instead");

  auto* c_pre = app.add_subcommand("pretrain", "Pretrain the frontend on unlabeled mixtures");
  AddCommon(c_pre, &common, true);
  c_pre->add_option("--manifest", pre.manifest, "Training manifest")->required()
      ->check(CLI::ExistingFile);
  c_pre->add_option("--valid-manifest", pre.valid_manifest, "Validation manifest")
      ->check(CLI::ExistingFile);
  c_pre->add_option("--centroids", pre.centroids, "Centroid archive from cluster-teacher")
      ->check(CLI::ExistingFile);

  auto* c_clu = app.add_subcommand("cluster-teacher",
                                   "Export teacher frames and fit their k-means centroids");
  AddCommon(c_clu, &common, true);
  c_clu->add_option("--manifest", clu.manifest, "Manifest")->required()->check(CLI::ExistingFile);

  auto* c_sep = app.add_subcommand("train-sep", "Train a separator on a frozen frontend");
  AddCommon(c_sep, &common, true);
  c_sep->add_option("--manifest", tsep.manifest, "Training manifest with references")
      ->required()->check(CLI::ExistingFile);
  c_sep->add_option("--valid-manifest", tsep.valid_manifest, "Validation manifest")
      ->check(CLI::ExistingFile);
  c_sep->add_option("--frontend", tsep.frontend, "Pretrained frontend checkpoint")
      ->check(CLI::ExistingFile);

  auto* c_eval = app.add_subcommand("eval", "Score a separator checkpoint on a manifest");
  AddCommon(c_eval, &common, true);
  c_eval->add_option("--checkpoint", ev.checkpoint, "Separator checkpoint")->required()
      ->check(CLI::ExistingFile);
  c_eval->add_option("--manifest", ev.manifest, "Manifest with references")->required()
      ->check(CLI::ExistingFile);
  c_eval->add_flag("!--no-audio", ev.write_audio, "Do not write separated WAV files");

  auto* c_prof = app.add_subcommand("profile", "Measure streaming RTF and latency");
  AddCommon(c_prof, &common, true);
  c_prof->add_option("--checkpoint", prof.checkpoint, "Separator checkpoint (default: fresh model)")
      ->check(CLI::ExistingFile);
  c_prof->add_option("--audio", prof.audio, "WAV file to stream (default: synthetic)")
      ->check(CLI::ExistingFile);
  c_prof->add_option("--chunk-ms", prof.chunk_ms, "Chunk length in ms");

  auto* c_mi = app.add_subcommand("mi-check", "Check the information bounds on discrete joints");
  AddCommon(c_mi, &common, true);
  c_mi->add_option("--trials", mi.trials, "Number of random joints")->check(CLI::PositiveNumber);
  c_mi->add_option("--alphabet", mi.alphabet, "Largest alphabet size");
  c_mi->add_option("--joint", mi.joint, "JSON joint table {nc, n1, n2, p}")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  CLI::App* cmd = app.get_subcommands().front();
  const std::string name = cmd->get_name();
  try {
    if (name == "simulate") return RunSimulate(common, sim);
    if (name == "pretrain") return RunPretrain(common, pre);
    if (name == "cluster-teacher") return RunClusterTeacher(common, clu);
    if (name == "train-sep") return RunTrainSep(common, tsep);
    if (name == "eval") return RunEval(common, ev);
    if (name == "profile") return RunProfile(common, prof);
    if (name == "mi-check") return RunMiCheck(common, mi);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& ch : msg)
      if (ch == '\n') ch = ' ';
    if (msg.rfind(name + ": ", 0) == 0) msg.erase(0, name.size() + 2);
    std::cerr << "error: " << name << ": " << msg << "\n";
    return 1;
  }
  return 2;
}
