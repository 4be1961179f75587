// src/teacher.cc

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

#include "csp/teacher.h"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "csp/archive.h"

namespace csp {

namespace {

double HzToMel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }

}  // namespace

LogMelTeacher::LogMelTeacher(const LogMelOptions& opts) : opts_(opts) {
  if (opts_.num_mels < 1 || opts_.hop < 1 || opts_.window < 1 || opts_.fft_size < opts_.window ||
      opts_.context < 0 || !(opts_.high_hz > opts_.low_hz))
    throw std::invalid_argument("log-mel teacher: invalid options");
  const int bins = opts_.fft_size / 2 + 1;
  const double sample_rate = 16000.0;
  mel_bank_ = Mat::Zero(opts_.num_mels, bins);
  const double lo = HzToMel(opts_.low_hz), hi = HzToMel(opts_.high_hz);
  for (int m = 0; m < opts_.num_mels; ++m) {
    const double left = lo + (hi - lo) * m / (opts_.num_mels + 1);
    const double centre = lo + (hi - lo) * (m + 1) / (opts_.num_mels + 1);
    const double right = lo + (hi - lo) * (m + 2) / (opts_.num_mels + 1);
    for (int b = 0; b < bins; ++b) {
      const double mel = HzToMel(b * sample_rate / opts_.fft_size);
      if (mel > left && mel < right)
        mel_bank_(m, b) = mel <= centre ? (mel - left) / (centre - left)
                                        : (right - mel) / (right - centre);
    }
  }
}

Mat LogMelTeacher::Frames(const std::string&, const Waveform& wave, int num_frames) const {
  if (num_frames < 1) throw std::invalid_argument("log-mel teacher: num_frames must be >= 1");
  const int n = opts_.fft_size, win = opts_.window;
  std::vector<double> hann(win);
  for (int i = 0; i < win; ++i) hann[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / win);
  Eigen::FFT<double> fft;
  std::vector<double> buf(n);
  std::vector<std::complex<double>> spec;
  Mat raw(num_frames, opts_.num_mels);
  const auto len = static_cast<long>(wave.size());
  for (int t = 0; t < num_frames; ++t) {
    const long start = static_cast<long>(t) * opts_.hop + opts_.hop / 2 - win / 2;
    std::fill(buf.begin(), buf.end(), 0.0);
    for (int i = 0; i < win; ++i) {
      const long j = start + i;
      if (j >= 0 && j < len) buf[i] = wave.samples[j] * hann[i];
    }
    fft.fwd(spec, buf);
    Eigen::VectorXd power(n / 2 + 1);
    for (int b = 0; b <= n / 2; ++b) power(b) = std::norm(spec[b]);
    raw.row(t) = (mel_bank_ * power).array().max(1e-10).log().matrix().transpose();
  }
  Mat out(num_frames, opts_.num_mels);
  for (int t = 0; t < num_frames; ++t) {
    const int a = std::max(0, t - opts_.context);
    const int b = std::min(num_frames - 1, t + opts_.context);
    out.row(t) = raw.middleRows(a, b - a + 1).colwise().mean();
  }
  if (opts_.normalize) {
    const RowVec mean = out.colwise().mean();
    out.rowwise() -= mean;
    RowVec sd = (out.array().square().colwise().sum() / num_frames).sqrt().matrix();
    for (int j = 0; j < sd.size(); ++j) out.col(j) /= std::max(sd(j), 1e-3);
  }
  return out;
}

FileTeacher::FileTeacher(const std::filesystem::path& path, double target_frame_rate)
    : target_rate_(target_frame_rate) {
  NamedArrays a = ReadArchive(path, kTeacherKind, kTeacherVersion);
  if (!a.meta.contains("frame_rate"))
    throw ArchiveError(ArchiveError::Code::kCorrupt,
                       "teacher file " + path.string() + " declares no frame_rate");
  frame_rate_ = a.meta.at("frame_rate").get<double>();
  if (!(frame_rate_ > 0.0)) throw std::invalid_argument("teacher file: frame_rate must be > 0");
  for (auto& [id, m] : a.arrays) {
    if (m.rows() < 1) throw std::invalid_argument("teacher file: empty array for " + id);
    if (dim_ == 0) dim_ = static_cast<int>(m.cols());
    if (m.cols() != dim_) throw std::invalid_argument("teacher file: inconsistent dims at " + id);
    frames_.emplace(id, std::move(m));
  }
  if (frames_.empty()) throw std::invalid_argument("teacher file " + path.string() + " is empty");
}

Mat FileTeacher::Frames(const std::string& id, const Waveform&, int num_frames) const {
  auto it = frames_.find(id);
  if (it == frames_.end()) throw std::out_of_range("teacher file has no entry for " + id);
  const Mat& src = it->second;
  Mat out(num_frames, dim_);
  for (int t = 0; t < num_frames; ++t) {
    auto j = static_cast<Eigen::Index>(std::floor(t * frame_rate_ / target_rate_ + 1e-9));
    out.row(t) = src.row(std::min(j, src.rows() - 1));
  }
  return out;
}

void WriteTeacherFile(const std::filesystem::path& path, const std::map<std::string, Mat>& frames,
                      double frame_rate) {
  NamedArrays a;
  a.kind = kTeacherKind;
  a.format_version = kTeacherVersion;
  a.meta["frame_rate"] = frame_rate;
  for (const auto& [id, m] : frames) a.arrays.emplace_back(id, m);
  WriteArchive(path, a);
}

}  // namespace csp
