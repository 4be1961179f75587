// csp/teacher.h

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

#ifndef CSP_TEACHER_H_
#define CSP_TEACHER_H_

#include <filesystem>
#include <map>
#include <string>

#include "csp/autograd.h"
#include "csp/wav_io.h"

namespace csp {

/// A frozen, possibly non-causal, per-frame representation at the frontend
/// frame rate. Implementations must be deterministic.
class Teacher {
 public:
  virtual ~Teacher() = default;
  virtual int dim() const = 0;
  /// Returns exactly `num_frames` rows for the utterance `id`.
  virtual Mat Frames(const std::string& id, const Waveform& wave, int num_frames) const = 0;
};

struct LogMelOptions {
  int num_mels = 40;
  int hop = 320;
  int window = 400;
  int fft_size = 512;
  double low_hz = 20.0;
  double high_hz = 8000.0;
  int context = 2;  // frames averaged on each side
  bool normalize = true;  // per-utterance mean and variance normalisation
};

/// Log-mel energies of a window centred on each hop, averaged over a symmetric
/// neighbourhood of frames and optionally standardised per utterance.
class LogMelTeacher : public Teacher {
 public:
  explicit LogMelTeacher(const LogMelOptions& opts = {});
  int dim() const override { return opts_.num_mels; }
  Mat Frames(const std::string& id, const Waveform& wave, int num_frames) const override;

 private:
  LogMelOptions opts_;
  Mat mel_bank_;  // num_mels x (fft_size/2 + 1)
};

/// Representations precomputed elsewhere, stored as a named-array archive
/// keyed by utterance id. Frames are mapped onto the target rate by nearest
/// preceding index and padded with the last frame.
class FileTeacher : public Teacher {
 public:
  FileTeacher(const std::filesystem::path& path, double target_frame_rate);
  int dim() const override { return dim_; }
  Mat Frames(const std::string& id, const Waveform& wave, int num_frames) const override;
  double frame_rate() const { return frame_rate_; }

 private:
  std::map<std::string, Mat> frames_;
  double frame_rate_ = 0.0;
  double target_rate_ = 0.0;
  int dim_ = 0;
};

inline constexpr char kTeacherKind[] = "csp-teacher";
inline constexpr int kTeacherVersion = 1;

void WriteTeacherFile(const std::filesystem::path& path, const std::map<std::string, Mat>& frames,
                      double frame_rate);

}  // namespace csp

#endif  // CSP_TEACHER_H_
