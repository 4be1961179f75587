// csp/nn.h

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

#ifndef CSP_NN_H_
#define CSP_NN_H_

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "csp/autograd.h"
#include "csp/ops.h"

namespace csp {

using Rng = std::mt19937_64;

/// Ordered collection of named parameters. Names are unique; insertion order
/// is the serialisation order.
class ParamStore {
 public:
  Var Add(const std::string& name, Mat init);
  Var Get(const std::string& name) const;
  bool Has(const std::string& name) const;
  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Var>>& entries() { return entries_; }

  void ZeroGrad();
  size_t NumScalars() const;
  /// FNV-1a over names, shapes and raw values.
  uint64_t Hash() const;

 private:
  std::vector<std::pair<std::string, Var>> entries_;
};

Mat UniformInit(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng);
Mat NormalInit(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng);

struct LinearLayer {
  Var weight;  // out x in
  Var bias;    // 1 x out, may be undefined

  static LinearLayer Create(ParamStore& store, const std::string& name, int in, int out,
                            bool with_bias, Rng& rng);
  Var Forward(const Var& x) const { return Linear(x, weight, bias); }
  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }
};

struct NormLayer {
  Var gamma;
  Var beta;
  static NormLayer Create(ParamStore& store, const std::string& name, int dim);
};

/// Causal 1-D convolution: left-pads dilation*(kernel-1)+1-stride zeros so the
/// output length is floor(len/stride) and frame t sees no input past its hop.
struct CausalConv {
  Var weight;
  Var bias;
  ConvSpec spec;

  static CausalConv Create(ParamStore& store, const std::string& name, int in, int out,
                           int kernel, int stride, int dilation, int groups, bool with_bias,
                           Rng& rng);
  Var Forward(const Var& x) const;
  /// Processes a stride-aligned chunk using `cache` (last left_pad input rows).
  Var StreamForward(const Var& x, Mat* cache) const;
  int left_pad() const { return spec.left_pad; }
};

}  // namespace csp

#endif  // CSP_NN_H_
