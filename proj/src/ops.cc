// src/ops.cc

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

#include "csp/ops.h"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace csp {

namespace {

void CheckSameShape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
}

inline void Acc(Node& self, size_t i, const Mat& g) {
  Node* p = self.parents[i].get();
  if (p->requires_grad) p->AccumulateGrad(g);
}

inline bool Wants(Node& self, size_t i) { return self.parents[i]->requires_grad; }

}  // namespace

Var Add(const Var& a, const Var& b) {
  CheckSameShape(a, b, "Add");
  return MakeOp(a.value() + b.value(), {a, b}, [](Node& self) {
    Acc(self, 0, self.grad);
    Acc(self, 1, self.grad);
  });
}

Var Sub(const Var& a, const Var& b) {
  CheckSameShape(a, b, "Sub");
  return MakeOp(a.value() - b.value(), {a, b}, [](Node& self) {
    Acc(self, 0, self.grad);
    if (Wants(self, 1)) self.parents[1]->AccumulateGrad(-self.grad);
  });
}

Var Mul(const Var& a, const Var& b) {
  CheckSameShape(a, b, "Mul");
  return MakeOp(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    if (Wants(self, 0))
      self.parents[0]->AccumulateGrad(self.grad.cwiseProduct(self.parents[1]->value));
    if (Wants(self, 1))
      self.parents[1]->AccumulateGrad(self.grad.cwiseProduct(self.parents[0]->value));
  });
}

Var Scale(const Var& a, double s) {
  return MakeOp(a.value() * s, {a}, [s](Node& self) { Acc(self, 0, self.grad * s); });
}

Var AddRowBroadcast(const Var& x, const Var& row) {
  if (row.rows() != 1 || row.cols() != x.cols())
    throw std::invalid_argument("AddRowBroadcast: row must be 1 x cols(x)");
  Mat out = x.value().rowwise() + row.value().row(0);
  return MakeOp(std::move(out), {x, row}, [](Node& self) {
    Acc(self, 0, self.grad);
    if (Wants(self, 1)) self.parents[1]->AccumulateGrad(self.grad.colwise().sum());
  });
}

Var MulRowBroadcast(const Var& x, const Var& row) {
  if (row.rows() != 1 || row.cols() != x.cols())
    throw std::invalid_argument("MulRowBroadcast: row must be 1 x cols(x)");
  Mat out = x.value().array().rowwise() * row.value().row(0).array();
  return MakeOp(std::move(out), {x, row}, [](Node& self) {
    const Mat& xv = self.parents[0]->value;
    const Mat& rv = self.parents[1]->value;
    if (Wants(self, 0))
      self.parents[0]->AccumulateGrad(self.grad.array().rowwise() * rv.row(0).array());
    if (Wants(self, 1))
      self.parents[1]->AccumulateGrad(self.grad.cwiseProduct(xv).colwise().sum());
  });
}

Var MulColBroadcast(const Var& x, const Var& col) {
  if (col.cols() != 1 || col.rows() != x.rows())
    throw std::invalid_argument("MulColBroadcast: col must be rows(x) x 1");
  Mat out = x.value().array().colwise() * col.value().col(0).array();
  return MakeOp(std::move(out), {x, col}, [](Node& self) {
    const Mat& xv = self.parents[0]->value;
    const Mat& cv = self.parents[1]->value;
    if (Wants(self, 0))
      self.parents[0]->AccumulateGrad(self.grad.array().colwise() * cv.col(0).array());
    if (Wants(self, 1))
      self.parents[1]->AccumulateGrad(self.grad.cwiseProduct(xv).rowwise().sum());
  });
}

Var MatMul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("MatMul: inner dimension mismatch");
  Mat out = a.value() * b.value();
  return MakeOp(std::move(out), {a, b}, [](Node& self) {
    if (Wants(self, 0))
      self.parents[0]->AccumulateGrad(self.grad * self.parents[1]->value.transpose());
    if (Wants(self, 1))
      self.parents[1]->AccumulateGrad(self.parents[0]->value.transpose() * self.grad);
  });
}

Var Linear(const Var& x, const Var& weight, const Var& bias) {
  if (x.cols() != weight.cols())
    throw std::invalid_argument("Linear: input has " + std::to_string(x.cols()) +
                                " features, weight expects " +
                                std::to_string(weight.cols()));
  Mat out = x.value() * weight.value().transpose();
  std::vector<Var> parents{x, weight};
  const bool has_bias = bias.defined();
  if (has_bias) {
    out.rowwise() += bias.value().row(0);
    parents.push_back(bias);
  }
  return MakeOp(std::move(out), std::move(parents), [has_bias](Node& self) {
    if (Wants(self, 0)) self.parents[0]->AccumulateGrad(self.grad * self.parents[1]->value);
    if (Wants(self, 1))
      self.parents[1]->AccumulateGrad(self.grad.transpose() * self.parents[0]->value);
    if (has_bias && Wants(self, 2))
      self.parents[2]->AccumulateGrad(self.grad.colwise().sum());
  });
}

Var Gelu(const Var& x) {
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  Mat out = x.value().unaryExpr(
      [inv_sqrt2](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); });
  return MakeOp(std::move(out), {x}, [inv_sqrt2](Node& self) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * M_PI);
    Mat d = self.parents[0]->value.unaryExpr([&](double v) {
      return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
    });
    Acc(self, 0, self.grad.cwiseProduct(d));
  });
}

Var Relu(const Var& x) {
  Mat out = x.value().cwiseMax(0.0);
  return MakeOp(std::move(out), {x}, [](Node& self) {
    Mat d = (self.parents[0]->value.array() > 0.0).cast<double>().matrix();
    Acc(self, 0, self.grad.cwiseProduct(d));
  });
}

Var Sigmoid(const Var& x) {
  Mat out = x.value().unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  return MakeOp(out, {x}, [out](Node& self) {
    Mat d = out.array() * (1.0 - out.array());
    Acc(self, 0, self.grad.cwiseProduct(d));
  });
}

Var PRelu(const Var& x, const Var& slope) {
  const double a = slope.scalar();
  Mat out = x.value().unaryExpr([a](double v) { return v > 0.0 ? v : a * v; });
  return MakeOp(std::move(out), {x, slope}, [a](Node& self) {
    const Mat& xv = self.parents[0]->value;
    if (Wants(self, 0)) {
      Mat d = xv.unaryExpr([a](double v) { return v > 0.0 ? 1.0 : a; });
      self.parents[0]->AccumulateGrad(self.grad.cwiseProduct(d));
    }
    if (Wants(self, 1)) {
      Mat neg = xv.cwiseMin(0.0);
      Mat g(1, 1);
      g(0, 0) = self.grad.cwiseProduct(neg).sum();
      self.parents[1]->AccumulateGrad(g);
    }
  });
}

Var Dropout(const Var& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("Dropout: p must be < 1");
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Mat mask(x.rows(), x.cols());
  const double keep_scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask.data()[i] = uni(rng) >= p ? keep_scale : 0.0;
  Mat out = x.value().cwiseProduct(mask);
  return MakeOp(std::move(out), {x},
                [mask](Node& self) { Acc(self, 0, self.grad.cwiseProduct(mask)); });
}

Var Sum(const Var& x) {
  Mat out(1, 1);
  out(0, 0) = x.value().sum();
  return MakeOp(std::move(out), {x}, [](Node& self) {
    const Mat& xv = self.parents[0]->value;
    Acc(self, 0, Mat::Constant(xv.rows(), xv.cols(), self.grad(0, 0)));
  });
}

Var Mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  return Scale(Sum(x), 1.0 / n);
}

Var SliceRows(const Var& x, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > x.rows())
    throw std::out_of_range("SliceRows: range outside input");
  Mat out = x.value().middleRows(begin, count);
  return MakeOp(std::move(out), {x}, [begin, count](Node& self) {
    if (!Wants(self, 0)) return;
    self.parents[0]->GradRef().middleRows(begin, count) += self.grad;
  });
}

Var SliceCols(const Var& x, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > x.cols())
    throw std::out_of_range("SliceCols: range outside input");
  Mat out = x.value().middleCols(begin, count);
  return MakeOp(std::move(out), {x}, [begin, count](Node& self) {
    if (!Wants(self, 0)) return;
    self.parents[0]->GradRef().middleCols(begin, count) += self.grad;
  });
}

Var ConcatRows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("ConcatRows: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("ConcatRows: column mismatch");
    rows += p.rows();
  }
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return MakeOp(std::move(out), parts, [](Node& self) {
    Eigen::Index r = 0;
    for (auto& p : self.parents) {
      const Eigen::Index n = p->value.rows();
      if (p->requires_grad) p->AccumulateGrad(self.grad.middleRows(r, n));
      r += n;
    }
  });
}

Var ConcatCols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("ConcatCols: no inputs");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts[0].rows();
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("ConcatCols: row mismatch");
    cols += p.cols();
  }
  Mat out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return MakeOp(std::move(out), parts, [](Node& self) {
    Eigen::Index c = 0;
    for (auto& p : self.parents) {
      const Eigen::Index n = p->value.cols();
      if (p->requires_grad) p->AccumulateGrad(self.grad.middleCols(c, n));
      c += n;
    }
  });
}

Var GatherRows(const Var& x, const std::vector<int>& index) {
  Mat out = Mat::Zero(static_cast<Eigen::Index>(index.size()), x.cols());
  for (size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.rows()) throw std::out_of_range("GatherRows: index out of range");
    if (index[i] >= 0) out.row(i) = x.value().row(index[i]);
  }
  return MakeOp(std::move(out), {x}, [index](Node& self) {
    if (!Wants(self, 0)) return;
    Mat& g = self.parents[0]->GradRef();
    for (size_t i = 0; i < index.size(); ++i)
      if (index[i] >= 0) g.row(index[i]) += self.grad.row(i);
  });
}

Var GroupNormRows(const Var& x, int groups, const Var& gamma, const Var& beta,
                  double eps) {
  const Eigen::Index T = x.rows(), C = x.cols();
  if (groups < 1 || C % groups != 0)
    throw std::invalid_argument("GroupNormRows: channels not divisible by groups");
  const Eigen::Index n = C / groups;
  Mat xhat(T, C);
  Mat inv_std(T, groups);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (int g = 0; g < groups; ++g) {
      auto seg = x.value().row(t).segment(g * n, n);
      const double mu = seg.mean();
      const double var = (seg.array() - mu).square().mean();
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std(t, g) = is;
      xhat.row(t).segment(g * n, n) = (seg.array() - mu) * is;
    }
  }
  Mat out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
            beta.value().row(0).array();
  return MakeOp(std::move(out), {x, gamma, beta},
                [xhat, inv_std, groups, n](Node& self) {
    const Mat& gv = self.parents[1]->value;
    if (Wants(self, 0)) {
      Mat dxhat = self.grad.array().rowwise() * gv.row(0).array();
      Mat dx(dxhat.rows(), dxhat.cols());
      for (Eigen::Index t = 0; t < dxhat.rows(); ++t) {
        for (int g = 0; g < groups; ++g) {
          auto dh = dxhat.row(t).segment(g * n, n).array();
          auto xh = xhat.row(t).segment(g * n, n).array();
          const double s1 = dh.sum();
          const double s2 = (dh * xh).sum();
          dx.row(t).segment(g * n, n) =
              (inv_std(t, g) / static_cast<double>(n)) *
              (static_cast<double>(n) * dh - s1 - xh * s2);
        }
      }
      self.parents[0]->AccumulateGrad(dx);
    }
    if (Wants(self, 1)) self.parents[1]->AccumulateGrad(self.grad.cwiseProduct(xhat).colwise().sum());
    if (Wants(self, 2)) self.parents[2]->AccumulateGrad(self.grad.colwise().sum());
  });
}

Var CumulativeLayerNorm(const Var& x, const Var& gamma, const Var& beta,
                        CumNormState* state, double eps) {
  const Eigen::Index T = x.rows(), C = x.cols();
  CumNormState run = state ? *state : CumNormState{};
  Mat xhat(T, C);
  std::vector<double> mean(T), inv_std(T), count(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    run.count += static_cast<double>(C);
    run.sum += x.value().row(t).sum();
    run.sum_sq += x.value().row(t).squaredNorm();
    const double mu = run.sum / run.count;
    const double var = std::max(run.sum_sq / run.count - mu * mu, 0.0);
    mean[t] = mu;
    inv_std[t] = 1.0 / std::sqrt(var + eps);
    count[t] = run.count;
    xhat.row(t) = (x.value().row(t).array() - mu) * inv_std[t];
  }
  if (state) *state = run;
  Mat out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
            beta.value().row(0).array();
  return MakeOp(std::move(out), {x, gamma, beta},
                [xhat, mean, inv_std, count](Node& self) {
    const Mat& xv = self.parents[0]->value;
    const Mat& gv = self.parents[1]->value;
    const Eigen::Index T = xv.rows();
    if (Wants(self, 0)) {
      Mat gh = self.grad.array().rowwise() * gv.row(0).array();  // dL/dy'
      std::vector<double> dS(T), dQ(T);
      Mat dx(xv.rows(), xv.cols());
      for (Eigen::Index t = 0; t < T; ++t) {
        const double r = inv_std[t];
        const double d_r = (gh.row(t).array() * (xv.row(t).array() - mean[t])).sum();
        const double d_var = -0.5 * r * r * r * d_r;
        const double d_mu = -r * gh.row(t).sum();
        dS[t] = (d_mu - 2.0 * mean[t] * d_var) / count[t];
        dQ[t] = d_var / count[t];
        dx.row(t) = gh.row(t) * r;
      }
      double acc_s = 0.0, acc_q = 0.0;
      for (Eigen::Index t = T - 1; t >= 0; --t) {
        acc_s += dS[t];
        acc_q += dQ[t];
        dx.row(t).array() += acc_s + 2.0 * acc_q * xv.row(t).array();
      }
      self.parents[0]->AccumulateGrad(dx);
    }
    if (Wants(self, 1)) self.parents[1]->AccumulateGrad(self.grad.cwiseProduct(xhat).colwise().sum());
    if (Wants(self, 2)) self.parents[2]->AccumulateGrad(self.grad.colwise().sum());
  });
}

Eigen::Index Conv1dOutputLength(Eigen::Index in_len, const ConvSpec& s) {
  const Eigen::Index span = static_cast<Eigen::Index>(s.dilation) * (s.kernel - 1) + 1;
  const Eigen::Index padded = in_len + s.left_pad;
  if (padded < span) return 0;
  return (padded - span) / s.stride + 1;
}

namespace {

// Builds the (T_out x K*cin_g) patch matrix for one channel group.
Mat Im2Col(const Mat& x, const ConvSpec& s, Eigen::Index t_out, Eigen::Index cin_g,
           Eigen::Index group) {
  Mat col = Mat::Zero(t_out, s.kernel * cin_g);
  for (Eigen::Index t = 0; t < t_out; ++t) {
    for (int k = 0; k < s.kernel; ++k) {
      const Eigen::Index src = t * s.stride + static_cast<Eigen::Index>(k) * s.dilation - s.left_pad;
      if (src < 0 || src >= x.rows()) continue;
      col.row(t).segment(k * cin_g, cin_g) = x.row(src).segment(group * cin_g, cin_g);
    }
  }
  return col;
}

void Col2ImAdd(const Mat& dcol, const ConvSpec& s, Eigen::Index cin_g, Eigen::Index group,
               Mat* dx) {
  for (Eigen::Index t = 0; t < dcol.rows(); ++t) {
    for (int k = 0; k < s.kernel; ++k) {
      const Eigen::Index src = t * s.stride + static_cast<Eigen::Index>(k) * s.dilation - s.left_pad;
      if (src < 0 || src >= dx->rows()) continue;
      dx->row(src).segment(group * cin_g, cin_g) += dcol.row(t).segment(k * cin_g, cin_g);
    }
  }
}

}  // namespace

Var Conv1d(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec) {
  const Eigen::Index cin = x.cols();
  const Eigen::Index cout = weight.rows();
  if (spec.groups < 1 || cin % spec.groups != 0 || cout % spec.groups != 0)
    throw std::invalid_argument("Conv1d: channels not divisible by groups");
  const Eigen::Index cin_g = cin / spec.groups;
  const Eigen::Index cout_g = cout / spec.groups;
  if (weight.cols() != spec.kernel * cin_g)
    throw std::invalid_argument("Conv1d: weight has " + std::to_string(weight.cols()) +
                                " columns, expected kernel*in/groups = " +
                                std::to_string(spec.kernel * cin_g));
  const Eigen::Index t_out = Conv1dOutputLength(x.rows(), spec);
  if (t_out <= 0) throw std::invalid_argument("Conv1d: input too short for kernel");

  Mat out(t_out, cout);
  const Mat& xv = x.value();
  const Mat& wv = weight.value();
  for (int g = 0; g < spec.groups; ++g) {
    Mat col = Im2Col(xv, spec, t_out, cin_g, g);
    out.middleCols(g * cout_g, cout_g).noalias() =
        col * wv.middleRows(g * cout_g, cout_g).transpose();
  }
  std::vector<Var> parents{x, weight};
  const bool has_bias = bias.defined();
  if (has_bias) {
    out.rowwise() += bias.value().row(0);
    parents.push_back(bias);
  }
  return MakeOp(std::move(out), std::move(parents),
                [spec, cin_g, cout_g, has_bias](Node& self) {
    const Mat& xv = self.parents[0]->value;
    const Mat& wv = self.parents[1]->value;
    const bool want_x = Wants(self, 0), want_w = Wants(self, 1);
    Mat dx, dw;
    if (want_x) dx = Mat::Zero(xv.rows(), xv.cols());
    if (want_w) dw = Mat::Zero(wv.rows(), wv.cols());
    for (int g = 0; g < spec.groups; ++g) {
      auto gout = self.grad.middleCols(g * cout_g, cout_g);
      if (want_w) {
        Mat col = Im2Col(xv, spec, self.grad.rows(), cin_g, g);
        dw.middleRows(g * cout_g, cout_g).noalias() = gout.transpose() * col;
      }
      if (want_x) {
        Mat dcol = gout * wv.middleRows(g * cout_g, cout_g);
        Col2ImAdd(dcol, spec, cin_g, g, &dx);
      }
    }
    if (want_x) self.parents[0]->AccumulateGrad(dx);
    if (want_w) self.parents[1]->AccumulateGrad(dw);
    if (has_bias && Wants(self, 2)) self.parents[2]->AccumulateGrad(self.grad.colwise().sum());
  });
}

Var OverlapAdd(const Var& frames, int hop, int trim_front, Eigen::Index out_len) {
  const Eigen::Index T = frames.rows(), L = frames.cols();
  Mat out = Mat::Zero(out_len, 1);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index l = 0; l < L; ++l) {
      const Eigen::Index n = t * hop - trim_front + l;
      if (n >= 0 && n < out_len) out(n, 0) += frames.value()(t, l);
    }
  }
  return MakeOp(std::move(out), {frames}, [hop, trim_front, T, L](Node& self) {
    Mat g = Mat::Zero(T, L);
    const Eigen::Index out_len = self.grad.rows();
    for (Eigen::Index t = 0; t < T; ++t) {
      for (Eigen::Index l = 0; l < L; ++l) {
        const Eigen::Index n = t * hop - trim_front + l;
        if (n >= 0 && n < out_len) g(t, l) = self.grad(n, 0);
      }
    }
    Acc(self, 0, g);
  });
}

Var CausalAttention(const Var& q, const Var& k, const Var& v, int heads,
                    Eigen::Index q_offset) {
  const Eigen::Index tq = q.rows(), tk = k.rows(), d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != tk)
    throw std::invalid_argument("CausalAttention: q/k/v shape mismatch");
  if (heads < 1 || d % heads != 0)
    throw std::invalid_argument("CausalAttention: dim not divisible by heads");
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Mat> probs(heads);
  Mat out(tq, d);
  for (int h = 0; h < heads; ++h) {
    Mat s = (q.value().middleCols(h * dh, dh) * k.value().middleCols(h * dh, dh).transpose()) * scale;
    for (Eigen::Index i = 0; i < tq; ++i) {
      const Eigen::Index last = std::min<Eigen::Index>(q_offset + i, tk - 1);
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j <= last; ++j) mx = std::max(mx, s(i, j));
      double z = 0.0;
      for (Eigen::Index j = 0; j < tk; ++j) {
        if (j <= last) {
          s(i, j) = std::exp(s(i, j) - mx);
          z += s(i, j);
        } else {
          s(i, j) = 0.0;
        }
      }
      s.row(i) /= z;
    }
    out.middleCols(h * dh, dh).noalias() = s * v.value().middleCols(h * dh, dh);
    probs[h] = std::move(s);
  }
  return MakeOp(std::move(out), {q, k, v}, [probs, heads, dh, scale](Node& self) {
    const Mat& qv = self.parents[0]->value;
    const Mat& kv = self.parents[1]->value;
    const Mat& vv = self.parents[2]->value;
    Mat dq = Mat::Zero(qv.rows(), qv.cols());
    Mat dk = Mat::Zero(kv.rows(), kv.cols());
    Mat dv = Mat::Zero(vv.rows(), vv.cols());
    for (int h = 0; h < heads; ++h) {
      const Mat& p = probs[h];
      auto go = self.grad.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh).noalias() = p.transpose() * go;
      Mat dp = go * vv.middleCols(h * dh, dh).transpose();
      Eigen::VectorXd rowdot = (dp.cwiseProduct(p)).rowwise().sum();
      Mat ds = p.cwiseProduct(dp.colwise() - rowdot);
      dq.middleCols(h * dh, dh).noalias() = (ds * kv.middleCols(h * dh, dh)) * scale;
      dk.middleCols(h * dh, dh).noalias() = (ds.transpose() * qv.middleCols(h * dh, dh)) * scale;
    }
    Acc(self, 0, dq);
    Acc(self, 1, dk);
    Acc(self, 2, dv);
  });
}

Var SoftmaxRows(const Var& x) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mx = x.value().row(i).maxCoeff();
    out.row(i) = (x.value().row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  return MakeOp(out, {x}, [out](Node& self) {
    Eigen::VectorXd dot = self.grad.cwiseProduct(out).rowwise().sum();
    Mat g = out.cwiseProduct(self.grad.colwise() - dot);
    Acc(self, 0, g);
  });
}

Var StraightThrough(const Mat& hard, const Var& soft) {
  if (hard.rows() != soft.rows() || hard.cols() != soft.cols())
    throw std::invalid_argument("StraightThrough: shape mismatch");
  return MakeOp(hard, {soft}, [](Node& self) { Acc(self, 0, self.grad); });
}

Var L2NormalizeRows(const Var& x) {
  Eigen::VectorXd norms = x.value().rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i)
    if (!(norms(i) > 0.0)) throw std::domain_error("L2NormalizeRows: zero-norm vector");
  Mat out = x.value().array().colwise() / norms.array();
  return MakeOp(out, {x}, [out, norms](Node& self) {
    Eigen::VectorXd dot = self.grad.cwiseProduct(out).rowwise().sum();
    Mat g = self.grad - (out.array().colwise() * dot.array()).matrix();
    g = g.array().colwise() / norms.array();
    Acc(self, 0, g);
  });
}

Var ContrastiveLoss(const Var& anchors, const Var& bank,
                    const std::vector<std::vector<int>>& candidates, double temperature,
                    const std::vector<std::vector<bool>>* valid) {
  if (!(temperature > 0.0)) throw std::invalid_argument("ContrastiveLoss: temperature must be > 0");
  const Eigen::Index M = anchors.rows();
  if (static_cast<Eigen::Index>(candidates.size()) != M)
    throw std::invalid_argument("ContrastiveLoss: one candidate list per anchor required");
  if (anchors.cols() != bank.cols())
    throw std::invalid_argument("ContrastiveLoss: anchor and bank dimensions differ");
  if (M == 0) throw std::invalid_argument("ContrastiveLoss: no anchors");
  const Mat& av = anchors.value();
  const Mat& bv = bank.value();
  std::vector<std::vector<double>> probs(M);
  double total = 0.0;
  for (Eigen::Index m = 0; m < M; ++m) {
    const auto& cand = candidates[m];
    if (cand.empty()) throw std::invalid_argument("ContrastiveLoss: empty candidate list");
    std::vector<double> logits(cand.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < cand.size(); ++j) {
      if (cand[j] < 0 || cand[j] >= bv.rows())
        throw std::out_of_range("ContrastiveLoss: candidate index out of range");
      const bool on = j == 0 || !valid || (*valid)[m][j];
      logits[j] = on ? av.row(m).dot(bv.row(cand[j])) / temperature
                     : -std::numeric_limits<double>::infinity();
      mx = std::max(mx, logits[j]);
    }
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    total += mx + std::log(z) - logits[0];
    auto& p = probs[m];
    p.resize(cand.size());
    for (size_t j = 0; j < cand.size(); ++j) p[j] = std::exp(logits[j] - mx) / z;
  }
  Mat out(1, 1);
  out(0, 0) = total / static_cast<double>(M);
  return MakeOp(std::move(out), {anchors, bank},
                [candidates, probs, temperature, M](Node& self) {
    const Mat& av = self.parents[0]->value;
    const Mat& bv = self.parents[1]->value;
    const bool want_a = Wants(self, 0), want_b = Wants(self, 1);
    const double scale = self.grad(0, 0) / (static_cast<double>(M) * temperature);
    Mat da, db;
    if (want_a) da = Mat::Zero(av.rows(), av.cols());
    if (want_b) db = Mat::Zero(bv.rows(), bv.cols());
    for (Eigen::Index m = 0; m < M; ++m) {
      const auto& cand = candidates[m];
      for (size_t j = 0; j < cand.size(); ++j) {
        const double coef = (probs[m][j] - (j == 0 ? 1.0 : 0.0)) * scale;
        if (coef == 0.0) continue;
        if (want_a) da.row(m) += coef * bv.row(cand[j]);
        if (want_b) db.row(cand[j]) += coef * av.row(m);
      }
    }
    if (want_a) self.parents[0]->AccumulateGrad(da);
    if (want_b) self.parents[1]->AccumulateGrad(db);
  });
}

Var DiversityLoss(const Var& probs) {
  const Eigen::Index G = probs.rows(), R = probs.cols();
  if (R < 2) throw std::invalid_argument("DiversityLoss: need at least 2 entries per group");
  const double log_r = std::log(static_cast<double>(R));
  double entropy = 0.0;
  for (Eigen::Index i = 0; i < probs.value().size(); ++i) {
    const double p = probs.value().data()[i];
    if (p > 0.0) entropy -= p * std::log(p);
  }
  Mat out(1, 1);
  out(0, 0) = 1.0 - entropy / (static_cast<double>(G) * log_r);
  return MakeOp(std::move(out), {probs}, [G, log_r](Node& self) {
    const Mat& pv = self.parents[0]->value;
    const double c = self.grad(0, 0) / (static_cast<double>(G) * log_r);
    Mat g = pv.unaryExpr([c](double p) { return c * (std::log(std::max(p, 1e-300)) + 1.0); });
    Acc(self, 0, g);
  });
}

Var NegSiSdr(const Var& estimate, const Mat& reference, double cap_db) {
  if (estimate.cols() != 1 || reference.cols() != 1 || estimate.rows() != reference.rows())
    throw std::invalid_argument("NegSiSdr: estimate and reference must be equal-length columns");
  const Eigen::Index L = estimate.rows();
  Eigen::VectorXd e = estimate.value().col(0).array() - estimate.value().col(0).mean();
  Eigen::VectorXd r = reference.col(0).array() - reference.col(0).mean();
  const double rr = r.squaredNorm();
  if (!(rr > 0.0)) throw std::domain_error("NegSiSdr: zero reference");
  const double alpha = e.dot(r) / rr;
  Eigen::VectorXd target = alpha * r;
  Eigen::VectorXd noise = e - target;
  const double tt = target.squaredNorm(), nn = noise.squaredNorm();
  double sdr;
  bool clamped = false;
  if (tt <= 0.0 || (nn > 0.0 && 10.0 * std::log10(tt / nn) <= -cap_db)) {
    sdr = -cap_db;
    clamped = true;
  } else if (nn <= 0.0 || 10.0 * std::log10(tt / nn) >= cap_db) {
    sdr = cap_db;
    clamped = true;
  } else {
    sdr = 10.0 * std::log10(tt / nn);
  }
  Mat out(1, 1);
  out(0, 0) = -sdr;
  return MakeOp(std::move(out), {estimate},
                [target, noise, tt, nn, clamped, L](Node& self) {
    if (clamped) return;
    const double k = -self.grad(0, 0) * 10.0 / std::log(10.0);
    Eigen::VectorXd g = k * (2.0 * target / tt - 2.0 * noise / nn);
    g.array() -= g.mean();
    Mat gm(L, 1);
    gm.col(0) = g;
    Acc(self, 0, gm);
  });
}

}  // namespace csp
