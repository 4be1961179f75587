// src/mi_bound.cc

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

#include "csp/mi_bound.h"

#include <array>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

namespace csp {

void DiscreteJoint::Validate() const {
  if (nc < 1 || n1 < 1 || n2 < 1 || nc > 16 || n1 > 16 || n2 > 16)
    throw std::invalid_argument("mi_bound_check: alphabet sizes must lie in [1, 16]");
  if (p.size() != static_cast<size_t>(nc) * n1 * n2)
    throw std::invalid_argument("mi_bound_check: table size does not match the alphabets");
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument("mi_bound_check: negative probability");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("mi_bound_check: table sums to " + std::to_string(sum) +
                                ", not 1");
}

bool DiscreteJoint::ConditionallyIndependent(double tol) const {
  for (int c = 0; c < nc; ++c) {
    double pc = 0.0;
    std::vector<double> a(n1, 0.0), b(n2, 0.0);
    for (int i = 0; i < n1; ++i)
      for (int j = 0; j < n2; ++j) {
        pc += at(c, i, j);
        a[i] += at(c, i, j);
        b[j] += at(c, i, j);
      }
    if (pc <= 0.0) continue;
    for (int i = 0; i < n1; ++i)
      for (int j = 0; j < n2; ++j)
        if (std::abs(at(c, i, j) - a[i] * b[j] / pc) > tol) return false;
  }
  return true;
}

DiscreteJoint DiscreteJoint::FromFactors(const std::vector<double>& pc,
                                         const std::vector<std::vector<double>>& s1_given_c,
                                         const std::vector<std::vector<double>>& s2_given_c) {
  DiscreteJoint j;
  j.nc = static_cast<int>(pc.size());
  if (s1_given_c.size() != pc.size() || s2_given_c.size() != pc.size() || pc.empty())
    throw std::invalid_argument("mi_bound_check: factor tables disagree on |c|");
  j.n1 = static_cast<int>(s1_given_c[0].size());
  j.n2 = static_cast<int>(s2_given_c[0].size());
  j.p.assign(static_cast<size_t>(j.nc) * j.n1 * j.n2, 0.0);
  for (int c = 0; c < j.nc; ++c) {
    if (static_cast<int>(s1_given_c[c].size()) != j.n1 ||
        static_cast<int>(s2_given_c[c].size()) != j.n2)
      throw std::invalid_argument("mi_bound_check: ragged conditional table");
    for (int a = 0; a < j.n1; ++a)
      for (int b = 0; b < j.n2; ++b)
        j.p[(static_cast<size_t>(c) * j.n1 + a) * j.n2 + b] =
            pc[c] * s1_given_c[c][a] * s2_given_c[c][b];
  }
  j.Validate();
  return j;
}

DiscreteJoint DiscreteJoint::Random(int nc, int n1, int n2, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> gamma1(1.0);
  auto dirichlet = [&](int n) {
    std::vector<double> v(n);
    double s = 0.0;
    for (auto& x : v) s += (x = gamma1(rng));
    for (auto& x : v) x /= s;
    return v;
  };
  std::vector<double> pc = dirichlet(nc);
  std::vector<std::vector<double>> a, b;
  for (int c = 0; c < nc; ++c) a.push_back(dirichlet(n1));
  for (int c = 0; c < nc; ++c) b.push_back(dirichlet(n2));
  return FromFactors(pc, a, b);
}

namespace {

enum Field { kC = 0, kS1, kS2, kZ, kCbar, kNumVars };

struct Outcome {
  std::array<int, kNumVars> v;
  double p;
};

double Entropy(const std::vector<Outcome>& outcomes, std::initializer_list<int> vars) {
  std::map<std::vector<int>, double> marginal;
  for (const auto& o : outcomes) {
    std::vector<int> key;
    for (int v : vars) key.push_back(o.v[v]);
    marginal[key] += o.p;
  }
  double h = 0.0;
  for (const auto& [k, p] : marginal)
    if (p > 0.0) h -= p * std::log2(p);
  return h;
}

}  // namespace

MiBoundReport MiBoundCheck(const DiscreteJoint& joint, const ContextRule& rule) {
  joint.Validate();
  std::vector<Outcome> outcomes;
  for (int c = 0; c < joint.nc; ++c)
    for (int a = 0; a < joint.n1; ++a)
      for (int b = 0; b < joint.n2; ++b) {
        const double p = joint.at(c, a, b);
        if (p > 0.0) outcomes.push_back({{c, a, b, a + b, rule ? rule(c, a, b) : 0}, p});
      }
  auto H = [&](std::initializer_list<int> v) { return Entropy(outcomes, v); };
  MiBoundReport r;
  const double h_c = H({kC});
  r.h_s1 = H({kS1});
  r.h_z = H({kZ});
  r.lhs = h_c + r.h_s1 - H({kC, kS1});
  r.i_cz = h_c + r.h_z - H({kC, kZ});
  r.rhs = r.i_cz + r.h_s1 - r.h_z;
  r.premise = joint.ConditionallyIndependent();
  r.holds = r.lhs >= r.rhs - 1e-12;

  const double h_cbar_s = H({kCbar, kS1}), h_c_cbar_s = H({kC, kCbar, kS1});
  r.i_c_cbar_s = h_c + h_cbar_s - h_c_cbar_s;
  r.i_c_cbar_given_s = H({kC, kS1}) + h_cbar_s - h_c_cbar_s - r.h_s1;
  r.chain_residual = r.lhs - (r.i_c_cbar_s - r.i_c_cbar_given_s);
  r.i_c_cbar = h_c + H({kCbar}) - H({kC, kCbar});
  r.h_cbar_given_s = h_cbar_s - r.h_s1;
  r.context_bound = r.i_c_cbar - r.h_cbar_given_s;
  r.context_holds = r.lhs >= r.context_bound - 1e-12;
  return r;
}

nlohmann::json MiBoundReport::ToJson() const {
  return {{"lhs_bits", lhs},
          {"rhs_bits", rhs},
          {"holds", holds},
          {"premise", premise},
          {"i_c_z_bits", i_cz},
          {"h_s1_bits", h_s1},
          {"h_z_bits", h_z},
          {"i_c_cbar_s_bits", i_c_cbar_s},
          {"i_c_cbar_given_s_bits", i_c_cbar_given_s},
          {"chain_residual_bits", chain_residual},
          {"i_c_cbar_bits", i_c_cbar},
          {"h_cbar_given_s_bits", h_cbar_given_s},
          {"context_bound_bits", context_bound},
          {"context_holds", context_holds}};
}

}  // namespace csp
