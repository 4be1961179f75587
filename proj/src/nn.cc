// src/nn.cc

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

#include "csp/nn.h"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace csp {

Var ParamStore::Add(const std::string& name, Mat init) {
  if (Has(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  Var v(std::move(init), true);
  entries_.emplace_back(name, v);
  return v;
}

Var ParamStore::Get(const std::string& name) const {
  for (const auto& [n, v] : entries_)
    if (n == name) return v;
  throw std::out_of_range("ParamStore: no parameter named " + name);
}

bool ParamStore::Has(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return true;
  return false;
}

void ParamStore::ZeroGrad() {
  for (auto& e : entries_) e.second.ZeroGrad();
}

size_t ParamStore::NumScalars() const {
  size_t n = 0;
  for (const auto& e : entries_) n += static_cast<size_t>(e.second.value().size());
  return n;
}

uint64_t ParamStore::Hash() const {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, v] : entries_) {
    mix(name.data(), name.size());
    const int64_t shape[2] = {v.rows(), v.cols()};
    mix(shape, sizeof(shape));
    mix(v.value().data(), sizeof(double) * static_cast<size_t>(v.value().size()));
  }
  return h;
}

Mat UniformInit(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Mat NormalInit(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

LinearLayer LinearLayer::Create(ParamStore& store, const std::string& name, int in, int out,
                                bool with_bias, Rng& rng) {
  LinearLayer l;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  l.weight = store.Add(name + ".weight", UniformInit(out, in, bound, rng));
  if (with_bias) l.bias = store.Add(name + ".bias", UniformInit(1, out, bound, rng));
  return l;
}

NormLayer NormLayer::Create(ParamStore& store, const std::string& name, int dim) {
  NormLayer n;
  n.gamma = store.Add(name + ".gamma", Mat::Ones(1, dim));
  n.beta = store.Add(name + ".beta", Mat::Zero(1, dim));
  return n;
}

CausalConv CausalConv::Create(ParamStore& store, const std::string& name, int in, int out,
                              int kernel, int stride, int dilation, int groups,
                              bool with_bias, Rng& rng) {
  if (kernel < 1 || stride < 1 || dilation < 1)
    throw std::invalid_argument("CausalConv: kernel, stride and dilation must be >= 1");
  const int span = dilation * (kernel - 1) + 1;
  if (span < stride)
    throw std::invalid_argument("CausalConv " + name + ": kernel span " +
                                std::to_string(span) + " is smaller than stride " +
                                std::to_string(stride));
  if (in % groups != 0 || out % groups != 0)
    throw std::invalid_argument("CausalConv " + name + ": channels not divisible by groups");
  CausalConv c;
  c.spec = ConvSpec{kernel, stride, dilation, groups, span - stride};
  const int fan_in = kernel * in / groups;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  c.weight = store.Add(name + ".weight", UniformInit(out, fan_in, bound, rng));
  if (with_bias) c.bias = store.Add(name + ".bias", UniformInit(1, out, bound, rng));
  return c;
}

Var CausalConv::Forward(const Var& x) const { return Conv1d(x, weight, bias, spec); }

Var CausalConv::StreamForward(const Var& x, Mat* cache) const {
  if (x.rows() % spec.stride != 0)
    throw std::invalid_argument("CausalConv::StreamForward: chunk not aligned to stride");
  const int pad = spec.left_pad;
  if (cache->rows() != pad || cache->cols() != x.cols()) *cache = Mat::Zero(pad, x.cols());
  ConvSpec s = spec;
  s.left_pad = 0;
  Var joined = pad > 0 ? ConcatRows({Var(*cache), x}) : x;
  Var out = Conv1d(joined, weight, bias, s);
  if (pad > 0) *cache = joined.value().bottomRows(pad);
  return out;
}

}  // namespace csp
