// src/profiling.cc

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

#include "csp/profiling.h"

#include <pthread.h>
#include <sched.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace csp {

double ConvMacs(double out_frames, double out_channels, double in_channels, double kernel,
                double groups) {
  return out_frames * out_channels * (in_channels / groups) * kernel;
}

double LinearMacs(double frames, double in, double out) { return frames * in * out; }

double AttentionMacs(double layers, double frames, double dim) {
  return layers * (2.0 * frames * frames * dim + 4.0 * frames * dim * dim);
}

MacCount CountMacs(const FrontendConfig* f, const SeparatorConfig* s, double seconds,
                   int sample_rate) {
  if (!(seconds > 0.0)) throw std::invalid_argument("count_macs: seconds must be > 0");
  MacCount mc;
  mc.seconds = seconds;
  auto add = [&mc](std::string name, double macs) {
    mc.layers.emplace_back(std::move(name), macs);
    mc.total += macs;
  };
  const auto samples = static_cast<int64_t>(std::llround(seconds * sample_rate));
  int64_t pattern_frames = 0;
  if (f) {
    int64_t len = samples;
    int in = 1;
    for (size_t i = 0; i < f->conv_strides.size(); ++i) {
      len /= f->conv_strides[i];
      add("encoder.conv" + std::to_string(i),
          ConvMacs(len, f->conv_channels, in, f->conv_kernels[i]));
      in = f->conv_channels;
    }
    pattern_frames = len;
    const double T = static_cast<double>(len), d = f->model_dim;
    add("context.in_proj", LinearMacs(T, f->conv_channels, d));
    add("context.pos_conv", ConvMacs(T, d, d, f->pos_kernel, f->pos_groups));
    add("context.attention", AttentionMacs(f->layers, T, d));
    add("context.ffn", f->layers * (LinearMacs(T, d, f->inner_dim) + LinearMacs(T, f->inner_dim, d)));
  }
  if (s) {
    const double T = static_cast<double>(samples / s->enc_stride);
    const double N = s->enc_dim, B = s->bottleneck, H = s->hidden;
    add("sep.encoder", ConvMacs(T, N, 1, s->enc_kernel));
    if (s->use_frontend && f)
      add("sep.adapter", LinearMacs(static_cast<double>(pattern_frames), f->model_dim, N));
    add("sep.bottleneck", LinearMacs(T, N, B));
    const double blocks = static_cast<double>(s->blocks) * s->repeats;
    add("sep.tcn", blocks * (LinearMacs(T, B, H) + ConvMacs(T, H, H, s->kernel, H) +
                             LinearMacs(T, H, B)));
    add("sep.mask", LinearMacs(T, B, s->speakers * N));
    add("sep.decoder", s->speakers * LinearMacs(T, N, s->enc_kernel));
  }
  return mc;
}

nlohmann::json ProfileReport::ToJson() const {
  return {{"model", model},
          {"ideal_latency_ms", ideal_latency_ms},
          {"macs_g_per_s", macs_g_per_s},
          {"rtf", rtf},
          {"measured_latency_ms", measured_latency_ms},
          {"chunk_ms", chunk_ms},
          {"audio_s", audio_s},
          {"chunks", chunks},
          {"hardware", hardware}};
}

const std::vector<std::string>& TimingFields() {
  static const std::vector<std::string> fields{"rtf", "measured_latency_ms"};
  return fields;
}

double IdealLatencyMs(const SeparationSystem& system, int sample_rate) {
  const bool fe = system.separator->config().use_frontend;
  const int hop = fe ? system.frontend->config().frontend.Hop()
                     : system.separator->config().enc_stride;
  return 1000.0 * hop / sample_rate;
}

std::vector<Mat> StreamSeparate(const SeparationSystem& system, const Waveform& audio,
                                int chunk_samples, std::vector<double>* chunk_seconds) {
  const bool fe = system.separator->config().use_frontend;
  const int unit = fe ? system.frontend->config().frontend.Hop()
                      : system.separator->config().enc_stride;
  if (chunk_samples < unit || chunk_samples % unit != 0)
    throw std::invalid_argument("stream: chunk of " + std::to_string(chunk_samples) +
                                " samples is not a positive multiple of " + std::to_string(unit));
  NoGradGuard no_grad;
  const auto chunks = static_cast<Eigen::Index>(audio.size() / chunk_samples);
  CspModel::StreamState fs;
  SeparatorStreamState ss;
  std::vector<Mat> out(system.separator->config().speakers,
                       Mat::Zero(chunks * chunk_samples, 1));
  for (Eigen::Index c = 0; c < chunks; ++c) {
    Mat chunk(chunk_samples, 1);
    for (int i = 0; i < chunk_samples; ++i)
      chunk(i, 0) = audio.samples[static_cast<size_t>(c * chunk_samples + i)];
    const auto t0 = std::chrono::steady_clock::now();
    Var x(std::move(chunk));
    std::vector<Mat> part;
    if (fe) {
      Var p = system.frontend->StreamPatterns(x, &fs);
      part = system.separator->StreamStep(x, &p, &ss);
    } else {
      part = system.separator->StreamStep(x, nullptr, &ss);
    }
    const auto t1 = std::chrono::steady_clock::now();
    if (chunk_seconds) chunk_seconds->push_back(std::chrono::duration<double>(t1 - t0).count());
    for (size_t s = 0; s < part.size(); ++s)
      out[s].middleRows(c * chunk_samples, chunk_samples) = part[s];
  }
  return out;
}

Mat StreamPatterns(const CspModel& model, const Waveform& audio, int chunk_samples) {
  const int hop = model.config().frontend.Hop();
  if (chunk_samples < hop || chunk_samples % hop != 0)
    throw std::invalid_argument("stream: chunk must be a positive multiple of the hop");
  NoGradGuard no_grad;
  CspModel::StreamState st;
  std::vector<Var> parts;
  for (size_t start = 0; start + chunk_samples <= audio.size(); start += chunk_samples) {
    Mat chunk(chunk_samples, 1);
    for (int i = 0; i < chunk_samples; ++i) chunk(i, 0) = audio.samples[start + i];
    parts.push_back(model.StreamPatterns(Var(std::move(chunk)), &st));
  }
  if (parts.empty()) throw std::invalid_argument("stream: audio shorter than one chunk");
  return ConcatRows(parts).value();
}

std::string HardwareNote() {
  std::ifstream in("/proc/cpuinfo");
  std::string line, cpu = "unknown cpu";
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(colon + 2);
      break;
    }
  }
  return cpu + ", 1 thread";
}

ProfileReport ProfileStreaming(const SeparationSystem& system, double chunk_ms,
                               const Waveform& audio) {
  const int rate = audio.sample_rate;
  const double ideal = IdealLatencyMs(system, rate);
  if (chunk_ms < ideal) {
    std::ostringstream msg;
    msg << "profile: chunk of " << chunk_ms << " ms is below the model's ideal latency of "
        << ideal << " ms";
    throw std::invalid_argument(msg.str());
  }
  const auto chunk = static_cast<int>(std::llround(chunk_ms * rate / 1000.0));
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(0, &set);
  pthread_setaffinity_np(pthread_self(), sizeof(set), &set);  // best effort

  std::vector<double> times;
  StreamSeparate(system, audio, chunk, &times);
  if (times.empty()) throw std::invalid_argument("profile: audio shorter than one chunk");

  ProfileReport r;
  const bool fe = system.separator->config().use_frontend;
  r.model = fe ? "csp+separator" : "separator";
  r.ideal_latency_ms = ideal;
  r.chunk_ms = chunk_ms;
  r.chunks = static_cast<int>(times.size());
  r.audio_s = static_cast<double>(times.size()) * chunk / rate;
  const FrontendConfig* fc = fe ? &system.frontend->config().frontend : nullptr;
  r.macs_g_per_s = CountMacs(fc, &system.separator->config(), r.audio_s, rate).GigaMacsPerSecond();
  const double total = std::accumulate(times.begin(), times.end(), 0.0);
  r.rtf = total / r.audio_s;
  r.measured_latency_ms = chunk_ms + 1000.0 * total / static_cast<double>(times.size());
  r.hardware = HardwareNote();
  return r;
}

}  // namespace csp
