// csp/profiling.h

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

#ifndef CSP_PROFILING_H_
#define CSP_PROFILING_H_

#include <string>
#include <utility>
#include <vector>

#include "csp/frontend.h"
#include "csp/separation.h"
#include "csp/wav_io.h"
#include "json.hpp"

namespace csp {

double ConvMacs(double out_frames, double out_channels, double in_channels, double kernel,
                double groups = 1.0);
double LinearMacs(double frames, double in, double out);
double AttentionMacs(double layers, double frames, double dim);

struct MacCount {
  std::vector<std::pair<std::string, double>> layers;  // per-layer MACs
  double total = 0.0;
  double seconds = 0.0;

  double GigaMacsPerSecond() const { return total / seconds / 1e9; }
};

/// Analytic MACs for `seconds` of input. Either config may be null. Norms,
/// activations and the pretraining-only heads are not counted.
MacCount CountMacs(const FrontendConfig* frontend, const SeparatorConfig* separator,
                   double seconds, int sample_rate = 16000);

struct ProfileReport {
  std::string model;
  double ideal_latency_ms = 0.0;
  double macs_g_per_s = 0.0;
  double rtf = 0.0;
  double measured_latency_ms = 0.0;
  double chunk_ms = 0.0;
  double audio_s = 0.0;
  int chunks = 0;
  std::string hardware;

  nlohmann::json ToJson() const;
};

/// Names of the ProfileReport fields that depend on wall-clock time.
const std::vector<std::string>& TimingFields();

/// Algorithmic latency: one frontend hop with a frontend, else one encoder stride.
double IdealLatencyMs(const SeparationSystem& system, int sample_rate = 16000);

/// Chunked causal inference. Audio is truncated to a whole number of chunks.
/// Returns per-speaker L x 1 outputs; `chunk_seconds` (optional) receives the
/// wall-clock compute time of every chunk.
std::vector<Mat> StreamSeparate(const SeparationSystem& system, const Waveform& audio,
                                int chunk_samples, std::vector<double>* chunk_seconds = nullptr);

/// Chunked pattern extraction with the frontend alone.
Mat StreamPatterns(const CspModel& model, const Waveform& audio, int chunk_samples);

/// Streams `audio` through the system in chunk_ms chunks on one pinned thread.
ProfileReport ProfileStreaming(const SeparationSystem& system, double chunk_ms,
                               const Waveform& audio);

/// CPU model string plus the thread count used.
std::string HardwareNote();

}  // namespace csp

#endif  // CSP_PROFILING_H_
