// src/wav_io.cc

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

#include "csp/wav_io.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace csp {

void Waveform::Validate() const {
  if (sample_rate <= 0) throw std::invalid_argument("waveform: sample rate must be positive");
  if (samples.empty()) throw std::invalid_argument("waveform: no samples");
  for (double s : samples)
    if (!std::isfinite(s)) throw std::invalid_argument("waveform: non-finite sample");
}

namespace {

uint32_t ReadU32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t ReadU16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
void PutU32(std::string* out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out->push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void PutU16(std::string* out, uint16_t v) {
  out->push_back(static_cast<char>(v & 0xff));
  out->push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace

Waveform ReadWav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open wav file " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  const std::string where = " in " + path.string();
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("not a RIFF/WAVE file" + where);

  int format = -1, channels = 0, bits = 0;
  uint32_t rate = 0;
  const unsigned char* data = nullptr;
  size_t data_len = 0;
  size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* ck = buf.data() + pos;
    const uint32_t len = ReadU32(ck + 4);
    const size_t body = pos + 8;
    if (body + len > buf.size() && std::memcmp(ck, "data", 4) != 0)
      throw std::runtime_error("truncated chunk" + where);
    if (std::memcmp(ck, "fmt ", 4) == 0) {
      if (len < 16) throw std::runtime_error("short fmt chunk" + where);
      format = ReadU16(buf.data() + body);
      channels = ReadU16(buf.data() + body + 2);
      rate = ReadU32(buf.data() + body + 4);
      bits = ReadU16(buf.data() + body + 14);
      if (format == 0xFFFE && len >= 26) format = ReadU16(buf.data() + body + 24);
    } else if (std::memcmp(ck, "data", 4) == 0) {
      data = buf.data() + body;
      data_len = std::min<size_t>(len, buf.size() - body);
    }
    pos = body + len + (len & 1u);
  }
  if (format < 0 || data == nullptr) throw std::runtime_error("missing fmt or data chunk" + where);
  if (channels != 1)
    throw std::runtime_error("expected mono audio, got " + std::to_string(channels) +
                             " channels" + where);

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    const size_t n = data_len / 2;
    w.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      const auto v = static_cast<int16_t>(ReadU16(data + 2 * i));
      w.samples[i] = static_cast<double>(v) / 32768.0;
    }
  } else if (format == 3 && bits == 32) {
    const size_t n = data_len / 4;
    w.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      const uint32_t bitsv = ReadU32(data + 4 * i);
      float f;
      std::memcpy(&f, &bitsv, 4);
      w.samples[i] = static_cast<double>(f);
    }
  } else {
    throw std::runtime_error("unsupported sample format (format " + std::to_string(format) +
                             ", " + std::to_string(bits) + " bits)" + where);
  }
  return w;
}

void WriteWav(const std::filesystem::path& path, const Waveform& wave, WavSampleFormat format) {
  const bool is_float = format == WavSampleFormat::kFloat32;
  const uint16_t bytes = is_float ? 4 : 2;
  const auto data_len = static_cast<uint32_t>(wave.samples.size() * bytes);
  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  PutU32(&out, 36 + data_len);
  out += "WAVEfmt ";
  PutU32(&out, 16);
  PutU16(&out, is_float ? 3 : 1);
  PutU16(&out, 1);
  PutU32(&out, static_cast<uint32_t>(wave.sample_rate));
  PutU32(&out, static_cast<uint32_t>(wave.sample_rate) * bytes);
  PutU16(&out, bytes);
  PutU16(&out, static_cast<uint16_t>(bytes * 8));
  out += "data";
  PutU32(&out, data_len);
  for (double s : wave.samples) {
    if (is_float) {
      const float f = static_cast<float>(s);
      uint32_t v;
      std::memcpy(&v, &f, 4);
      PutU32(&out, v);
    } else {
      const double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
      PutU16(&out, static_cast<uint16_t>(static_cast<int16_t>(std::lround(c * 32768.0))));
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write wav file " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace csp
