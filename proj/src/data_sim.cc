// src/data_sim.cc

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

#include "csp/data_sim.h"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace csp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr double kPeakTarget = 0.9;
}  // namespace

MixtureExample SimulateMixture(const std::vector<Waveform>& sources,
                               const std::vector<double>& gains_db, std::string id) {
  if (sources.empty()) throw std::invalid_argument("simulate_mixture: empty source list");
  if (gains_db.size() != sources.size())
    throw std::invalid_argument("simulate_mixture: " + std::to_string(gains_db.size()) +
                                " gains for " + std::to_string(sources.size()) + " sources");
  const int rate = sources[0].sample_rate;
  const size_t len = sources[0].size();
  for (const auto& s : sources) {
    s.Validate();
    if (s.sample_rate != rate)
      throw std::invalid_argument("simulate_mixture: mismatched sample rates (" +
                                  std::to_string(rate) + " vs " +
                                  std::to_string(s.sample_rate) + ")");
    if (s.size() != len) throw std::invalid_argument("simulate_mixture: sources differ in length");
  }

  MixtureExample ex;
  ex.id = std::move(id);
  ex.gains_db = gains_db;
  ex.mixture.sample_rate = rate;
  ex.mixture.samples.assign(len, 0.0);
  for (size_t i = 0; i < sources.size(); ++i) {
    const double g = std::pow(10.0, gains_db[i] / 20.0);
    Waveform scaled{std::vector<double>(len), rate};
    for (size_t n = 0; n < len; ++n) {
      scaled.samples[n] = g * sources[i].samples[n];
      ex.mixture.samples[n] += scaled.samples[n];
    }
    ex.sources.push_back(std::move(scaled));
  }
  double peak = 0.0;
  for (double v : ex.mixture.samples) peak = std::max(peak, std::abs(v));
  if (peak > 1.0) {
    ex.peak_scale = kPeakTarget / peak;
    for (auto& v : ex.mixture.samples) v *= ex.peak_scale;
    for (auto& s : ex.sources)
      for (auto& v : s.samples) v *= ex.peak_scale;
  }
  return ex;
}

std::vector<Waveform> TrimToCommonLength(std::vector<Waveform> sources) {
  if (sources.empty()) return sources;
  size_t n = sources[0].size();
  for (const auto& s : sources) n = std::min(n, s.size());
  for (auto& s : sources) s.samples.resize(n);
  return sources;
}

std::vector<MixtureExample> CropBatch(const std::vector<MixtureExample>& examples,
                                      double duration_s, uint64_t seed) {
  if (!(duration_s > 0.0)) throw std::invalid_argument("crop_batch: duration must be positive");
  std::mt19937_64 rng(seed);
  std::vector<MixtureExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const int rate = ex.mixture.sample_rate;
    const auto target = static_cast<size_t>(std::llround(duration_s * rate));
    const size_t len = ex.mixture.size();
    size_t offset = 0;
    if (len > target) {
      std::uniform_int_distribution<size_t> pick(0, len - target);
      offset = pick(rng);
    }
    auto crop = [&](const Waveform& w) {
      Waveform c{std::vector<double>(target, 0.0), w.sample_rate};
      const size_t avail = std::min(target, w.size() > offset ? w.size() - offset : 0);
      std::copy_n(w.samples.begin() + static_cast<std::ptrdiff_t>(offset), avail,
                  c.samples.begin());
      return c;
    };
    MixtureExample c = ex;
    c.mixture = crop(ex.mixture);
    for (size_t i = 0; i < ex.sources.size(); ++i) c.sources[i] = crop(ex.sources[i]);
    out.push_back(std::move(c));
  }
  return out;
}

fs::path Manifest::Resolve(const std::string& p) const {
  fs::path path(p);
  if (path.is_absolute() || base_dir.empty()) return path;
  return base_dir / path;
}

Manifest BuildManifest(const fs::path& root) {
  const fs::path mix_dir = root / "mix";
  if (!fs::is_directory(mix_dir))
    throw std::runtime_error("build_manifest: no mix/ directory under " + root.string());
  std::vector<fs::path> source_dirs;
  for (int k = 1;; ++k) {
    fs::path d = root / ("s" + std::to_string(k));
    if (!fs::is_directory(d)) break;
    source_dirs.push_back(d);
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(mix_dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("build_manifest: zero entries under " + root.string());

  Manifest m;
  m.base_dir = root;
  for (const auto& f : files) {
    ManifestEntry e;
    e.id = f.stem().string();
    e.mixture_path = fs::relative(f, root).generic_string();
    Waveform w;
    try {
      w = ReadWav(f);
    } catch (const std::exception& err) {
      throw std::runtime_error("build_manifest: entry " + e.id + ": " + err.what());
    }
    e.duration_s = w.duration_s();
    e.sample_rate = w.sample_rate;
    for (const auto& d : source_dirs) {
      const fs::path src = d / f.filename();
      if (!fs::is_regular_file(src))
        throw std::runtime_error("build_manifest: entry " + e.id + ": missing source file " +
                                 src.string());
      e.source_paths.push_back(fs::relative(src, root).generic_string());
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

std::string ManifestToJsonl(const Manifest& manifest) {
  std::ostringstream out;
  for (const auto& e : manifest.entries) {
    json j;
    j["id"] = e.id;
    j["mixture_path"] = e.mixture_path;
    j["source_paths"] = e.source_paths;
    j["gains_db"] = e.gains_db;
    j["duration_s"] = e.duration_s;
    j["sample_rate"] = e.sample_rate;
    out << j.dump() << "\n";
  }
  return out.str();
}

Manifest ManifestFromJsonl(const std::string& text) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  std::set<std::string> ids;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& err) {
      throw std::runtime_error("manifest line " + std::to_string(lineno) + ": " + err.what());
    }
    ManifestEntry e;
    e.id = j.at("id").get<std::string>();
    e.mixture_path = j.value("mixture_path", std::string());
    e.source_paths = j.value("source_paths", std::vector<std::string>{});
    e.gains_db = j.value("gains_db", std::vector<double>{});
    e.duration_s = j.value("duration_s", 0.0);
    e.sample_rate = j.value("sample_rate", 16000);
    if (!ids.insert(e.id).second) throw std::runtime_error("manifest: duplicate id " + e.id);
    m.entries.push_back(std::move(e));
  }
  return m;
}

void WriteManifest(const fs::path& path, const Manifest& manifest) {
  Manifest rebased = manifest;
  const fs::path dir = fs::absolute(path).parent_path();
  auto rebase = [&](std::string& p) {
    if (p.empty()) return;
    const fs::path abs = fs::absolute(manifest.Resolve(p)).lexically_normal();
    p = abs.lexically_relative(dir).generic_string();
  };
  for (auto& e : rebased.entries) {
    rebase(e.mixture_path);
    for (auto& s : e.source_paths) rebase(s);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write manifest " + path.string());
  f << ManifestToJsonl(rebased);
}

Manifest ReadManifest(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read manifest " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  Manifest m = ManifestFromJsonl(ss.str());
  m.base_dir = fs::absolute(path).parent_path();
  return m;
}

MixtureExample LoadExample(const Manifest& manifest, const ManifestEntry& entry) {
  MixtureExample ex;
  ex.id = entry.id;
  ex.gains_db = entry.gains_db;
  try {
    ex.mixture = ReadWav(manifest.Resolve(entry.mixture_path));
    for (const auto& p : entry.source_paths) ex.sources.push_back(ReadWav(manifest.Resolve(p)));
  } catch (const std::exception& err) {
    throw std::runtime_error("entry " + entry.id + ": " + err.what());
  }
  for (const auto& s : ex.sources)
    if (s.size() != ex.mixture.size() || s.sample_rate != ex.mixture.sample_rate)
      throw std::runtime_error("entry " + entry.id + ": source does not match mixture shape");
  return ex;
}

Waveform SynthesizeVoice(const SynthVoice& voice, double duration_s, int sample_rate,
                         uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const auto n = static_cast<size_t>(std::llround(duration_s * sample_rate));
  Waveform w{std::vector<double>(n, 0.0), sample_rate};

  // Syllable-like voiced bursts separated by short pauses.
  std::vector<double> env(n, 0.0);
  size_t pos = static_cast<size_t>(uni(rng) * 0.1 * sample_rate);
  while (pos < n) {
    const auto on = static_cast<size_t>((0.12 + 0.23 * uni(rng)) * sample_rate);
    for (size_t i = 0; i < on && pos + i < n; ++i)
      env[pos + i] = std::sin(M_PI * static_cast<double>(i) / static_cast<double>(on));
    pos += on + static_cast<size_t>((0.04 + 0.11 * uni(rng)) * sample_rate);
  }

  const double center = voice.f0_lo_hz + uni(rng) * (voice.f0_hi_hz - voice.f0_lo_hz);
  const double glide_hz = 0.3 + 0.7 * uni(rng);
  const double glide_phase = 2.0 * M_PI * uni(rng);
  const double depth = 0.5 * (voice.f0_hi_hz - voice.f0_lo_hz);
  // A per-voice spectral tilt plus one formant-like peak.
  const double formant = 500.0 + 1500.0 * uni(rng);
  double phase = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    double f0 = center + depth * std::sin(2.0 * M_PI * glide_hz * t + glide_phase);
    f0 = std::clamp(f0, voice.f0_lo_hz, voice.f0_hi_hz);
    phase += 2.0 * M_PI * f0 / sample_rate;
    if (env[i] == 0.0) continue;
    double v = 0.0;
    for (int h = 1; h <= 30 && h * f0 < 0.45 * sample_rate && h * f0 < 4000.0; ++h) {
      const double fh = h * f0;
      const double peak = std::exp(-0.5 * std::pow((fh - formant) / 400.0, 2.0));
      v += (1.0 / h + 0.5 * peak) * std::sin(h * phase);
    }
    w.samples[i] = env[i] * v;
  }
  double energy = 0.0;
  for (double v : w.samples) energy += v * v;
  const double rms = std::sqrt(energy / static_cast<double>(std::max<size_t>(n, 1)));
  if (rms > 0.0)
    for (auto& v : w.samples) v *= 0.1 / rms;
  return w;
}

namespace {

void WriteExample(const fs::path& out_dir, const MixtureExample& ex, ManifestEntry* entry) {
  const std::string file = ex.id + ".wav";
  WriteWav(out_dir / "mix" / file, ex.mixture);
  entry->id = ex.id;
  entry->mixture_path = "mix/" + file;
  entry->source_paths.clear();
  for (size_t k = 0; k < ex.sources.size(); ++k) {
    const std::string rel = "s" + std::to_string(k + 1) + "/" + file;
    WriteWav(out_dir / rel, ex.sources[k]);
    entry->source_paths.push_back(rel);
  }
  entry->gains_db = ex.gains_db;
  entry->duration_s = ex.mixture.duration_s();
  entry->sample_rate = ex.mixture.sample_rate;
}

std::vector<double> SampleGains(size_t count, const GainConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(cfg.lo_db, cfg.hi_db);
  std::vector<double> g(count);
  for (auto& v : g) v = cfg.hi_db > cfg.lo_db ? dist(rng) : cfg.lo_db;
  return g;
}

}  // namespace

Manifest SimulateSyntheticCorpus(const fs::path& out_dir, int count, double duration_s,
                                 int sample_rate, const GainConfig& gains, uint64_t seed) {
  if (count < 1) throw std::invalid_argument("simulate: count must be >= 1");
  std::mt19937_64 rng(seed);
  const SynthVoice low{100.0, 160.0};
  const SynthVoice high{210.0, 320.0};
  Manifest m;
  m.base_dir = out_dir;
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "mix%04d", i);
    const uint64_t s1 = rng(), s2 = rng();
    std::vector<Waveform> src{SynthesizeVoice(low, duration_s, sample_rate, s1),
                              SynthesizeVoice(high, duration_s, sample_rate, s2)};
    MixtureExample ex = SimulateMixture(src, SampleGains(2, gains, rng), id);
    ManifestEntry e;
    WriteExample(out_dir, ex, &e);
    m.entries.push_back(std::move(e));
  }
  WriteManifest(out_dir / "manifest.jsonl", m);
  return m;
}

Manifest SimulateFromManifest(const Manifest& input, const fs::path& out_dir,
                              const GainConfig& gains, uint64_t seed) {
  std::mt19937_64 rng(seed);
  Manifest m;
  m.base_dir = out_dir;
  std::vector<ManifestEntry> sorted = input.entries;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  for (const auto& in : sorted) {
    if (in.source_paths.empty())
      throw std::runtime_error("simulate: entry " + in.id + " lists no source_paths");
    std::vector<Waveform> src;
    for (const auto& p : in.source_paths) {
      try {
        src.push_back(ReadWav(input.Resolve(p)));
      } catch (const std::exception& err) {
        throw std::runtime_error("simulate: entry " + in.id + ": " + err.what());
      }
    }
    src = TrimToCommonLength(std::move(src));
    std::vector<double> g = in.gains_db.size() == src.size() ? in.gains_db
                                                            : SampleGains(src.size(), gains, rng);
    MixtureExample ex = SimulateMixture(src, g, in.id);
    ManifestEntry e;
    WriteExample(out_dir, ex, &e);
    m.entries.push_back(std::move(e));
  }
  WriteManifest(out_dir / "manifest.jsonl", m);
  return m;
}

}  // namespace csp
