// csp/data_sim.h

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

#ifndef CSP_DATA_SIM_H_
#define CSP_DATA_SIM_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "csp/wav_io.h"

namespace csp {

struct MixtureExample {
  std::string id;
  Waveform mixture;
  std::vector<Waveform> sources;  // gain-scaled; empty for unlabeled mixtures
  std::vector<double> gains_db;
  /// Joint factor applied to mixture and sources when the raw mixture
  /// peak exceeded 1. 1.0 when no rescaling happened.
  double peak_scale = 1.0;
};

/// mixture = sum_i 10^(gains_db[i]/20) * sources[i]. Sources must share rate and
/// length. If the peak exceeds 1, mixture and sources are rescaled together.
MixtureExample SimulateMixture(const std::vector<Waveform>& sources,
                               const std::vector<double>& gains_db, std::string id = "");

/// Truncates every source to the shortest one ("min" mode).
std::vector<Waveform> TrimToCommonLength(std::vector<Waveform> sources);

/// Crops (or right-pads with zeros) every example to round(duration_s * rate)
/// samples. Offsets are uniform over the valid range and seeded.
std::vector<MixtureExample> CropBatch(const std::vector<MixtureExample>& examples,
                                      double duration_s, uint64_t seed);

struct ManifestEntry {
  std::string id;
  std::string mixture_path;
  std::vector<std::string> source_paths;
  std::vector<double> gains_db;
  double duration_s = 0.0;
  int sample_rate = 16000;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  /// Directory that relative paths are resolved against (not serialised).
  std::filesystem::path base_dir;

  std::filesystem::path Resolve(const std::string& p) const;
};

/// Scans `root/mix/*.wav` with sources in `root/s1`, `root/s2`, ... (same file
/// name). Entries are sorted by id. A missing or unreadable file raises an
/// error naming the id.
Manifest BuildManifest(const std::filesystem::path& root);

std::string ManifestToJsonl(const Manifest& manifest);
Manifest ManifestFromJsonl(const std::string& text);
/// Writes JSONL with paths rewritten relative to the file's directory.
void WriteManifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest ReadManifest(const std::filesystem::path& path);

/// Loads the mixture and (if listed) the reference sources of one entry.
MixtureExample LoadExample(const Manifest& manifest, const ManifestEntry& entry);

/// Parameters of the toy "speaker" generator used at desk scale: voiced bursts
/// of a harmonic complex with a gliding pitch inside a speaker-specific range.
struct SynthVoice {
  double f0_lo_hz = 100.0;
  double f0_hi_hz = 160.0;
};

Waveform SynthesizeVoice(const SynthVoice& voice, double duration_s, int sample_rate,
                         uint64_t seed);

/// Configuration for gain sampling when a manifest entry lists no gains.
struct GainConfig {
  double lo_db = -2.5;
  double hi_db = 2.5;
};

/// Writes `count` two-speaker mixtures in the LibriMix-style layout under
/// `out_dir` (mix/, s1/, s2/) and returns their manifest. Speaker 1 is drawn
/// from a low pitch range and speaker 2 from a high one.
Manifest SimulateSyntheticCorpus(const std::filesystem::path& out_dir, int count,
                                 double duration_s, int sample_rate, const GainConfig& gains,
                                 uint64_t seed);

/// Mixes the sources listed in `input` and writes the result under `out_dir`.
Manifest SimulateFromManifest(const Manifest& input, const std::filesystem::path& out_dir,
                              const GainConfig& gains, uint64_t seed);

}  // namespace csp

#endif  // CSP_DATA_SIM_H_
