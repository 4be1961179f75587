// src/quantizer.cc

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

#include "csp/quantizer.h"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace csp {

void QuantizerConfig::Validate() const {
  if (groups < 1 || entries < 2 || codeword_dim < groups || codeword_dim % groups != 0)
    throw std::invalid_argument("quantizer: need groups >= 1, entries >= 2 and codeword_dim "
                                "divisible by groups");
  if (in_dim < 1 || out_dim < 1) throw std::invalid_argument("quantizer: bad in/out dim");
}

GumbelQuantizer::GumbelQuantizer(ParamStore& store, const std::string& name,
                                 const QuantizerConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  cfg_.Validate();
  // Unit-variance logit weights so that selections start out confident.
  input_proj_.weight = store.Add(name + ".input_proj.weight",
                                 NormalInit(cfg.groups * cfg.entries, cfg.in_dim, 1.0, rng));
  input_proj_.bias = store.Add(name + ".input_proj.bias", Mat::Zero(1, cfg.groups * cfg.entries));
  codebook_ = store.Add(name + ".codebook",
                        UniformInit(static_cast<Eigen::Index>(cfg.groups) * cfg.entries,
                                    cfg.codeword_dim / cfg.groups, 1.0, rng));
  output_proj_ = LinearLayer::Create(store, name + ".output_proj", cfg.codeword_dim,
                                     cfg.out_dim, true, rng);
}

Mat SampleGumbel(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::uniform_real_distribution<double> uni(std::numeric_limits<double>::min(), 1.0);
  Mat g(rows, cols);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = -std::log(-std::log(uni(rng)));
  return g;
}

QuantizeResult GumbelQuantizer::Quantize(const Var& x, double temperature, bool train,
                                         Rng* rng) const {
  return QuantizeLogits(input_proj_.Forward(x), temperature, train, rng);
}

QuantizeResult GumbelQuantizer::QuantizeLogits(const Var& logits, double temperature, bool train,
                                               Rng* rng) const {
  if (!(temperature > 0.0)) throw std::invalid_argument("quantize: temperature must be > 0");
  const int G = cfg_.groups, R = cfg_.entries;
  if (logits.cols() != static_cast<Eigen::Index>(G) * R)
    throw std::invalid_argument("quantize: logits width does not match G*R");
  if (train && rng == nullptr) throw std::invalid_argument("quantize: train mode needs an rng");
  const Eigen::Index T = logits.rows();

  QuantizeResult res;
  res.indices.assign(T, std::vector<int>(G, 0));
  std::vector<Var> token_parts, prob_rows;
  const Var avg_row(Mat::Constant(1, T, 1.0 / static_cast<double>(T)));
  for (int g = 0; g < G; ++g) {
    Var lg = SliceCols(logits, static_cast<Eigen::Index>(g) * R, R);
    Mat scores = lg.value();
    Var soft;
    if (train) {
      Mat noise = SampleGumbel(T, R, *rng);
      scores += noise;
      soft = SoftmaxRows(Scale(Add(lg, Var(noise)), 1.0 / temperature));
    }
    Mat hard = Mat::Zero(T, R);
    for (Eigen::Index t = 0; t < T; ++t) {
      Eigen::Index best;
      scores.row(t).maxCoeff(&best);
      hard(t, best) = 1.0;
      res.indices[t][g] = static_cast<int>(best);
    }
    Var sel = train ? StraightThrough(hard, soft) : Var(hard);
    token_parts.push_back(MatMul(sel, SliceRows(codebook_, static_cast<Eigen::Index>(g) * R, R)));
    prob_rows.push_back(MatMul(avg_row, SoftmaxRows(lg)));
  }
  res.tokens = output_proj_.Forward(ConcatCols(token_parts));
  res.probs = ConcatRows(prob_rows);
  return res;
}

RowVec GumbelQuantizer::Codeword(const std::vector<int>& choice) const {
  const int G = cfg_.groups, R = cfg_.entries;
  if (static_cast<int>(choice.size()) != G) throw std::invalid_argument("Codeword: one index per group");
  const Eigen::Index w = cfg_.codeword_dim / G;
  RowVec cw(cfg_.codeword_dim);
  for (int g = 0; g < G; ++g) {
    if (choice[g] < 0 || choice[g] >= R) throw std::out_of_range("Codeword: index out of range");
    cw.segment(g * w, w) = codebook_.value().row(static_cast<Eigen::Index>(g) * R + choice[g]);
  }
  RowVec out = cw * output_proj_.weight.value().transpose();
  if (output_proj_.bias.defined()) out += output_proj_.bias.value().row(0);
  return out;
}

double DiversityLossValue(const Mat& probs) {
  for (Eigen::Index i = 0; i < probs.size(); ++i)
    if (probs.data()[i] < 0.0) throw std::invalid_argument("diversity_loss: negative probability");
  return DiversityLoss(Var(probs)).scalar();
}

double AnnealTemperature(int64_t step, double start, double floor, double decay) {
  if (step < 0) throw std::invalid_argument("anneal_temperature: step must be >= 0");
  return std::max(floor, start * std::pow(decay, static_cast<double>(step)));
}

}  // namespace csp
