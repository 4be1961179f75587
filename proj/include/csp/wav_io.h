// csp/wav_io.h

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

#ifndef CSP_WAV_IO_H_
#define CSP_WAV_IO_H_

#include <filesystem>
#include <string>
#include <vector>

namespace csp {

/// Mono audio. Samples are nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  size_t size() const { return samples.size(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
  /// Throws unless the waveform is non-empty, finite and has a positive rate.
  void Validate() const;
};

enum class WavSampleFormat { kPcm16, kFloat32 };

/// Reads a mono RIFF/WAVE file with 16-bit PCM or 32-bit float samples.
Waveform ReadWav(const std::filesystem::path& path);
void WriteWav(const std::filesystem::path& path, const Waveform& wave,
              WavSampleFormat format = WavSampleFormat::kFloat32);

}  // namespace csp

#endif  // CSP_WAV_IO_H_
