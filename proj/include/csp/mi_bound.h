// csp/mi_bound.h

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

#ifndef CSP_MI_BOUND_H_
#define CSP_MI_BOUND_H_

#include <cstdint>
#include <functional>
#include <vector>

#include "json.hpp"

namespace csp {

/// Joint pmf over (c, s1, s2) with z = s1 + s2 derived. Indexed
/// p[(c * n1 + s1) * n2 + s2].
struct DiscreteJoint {
  int nc = 0, n1 = 0, n2 = 0;
  std::vector<double> p;

  double at(int c, int s1, int s2) const { return p[(static_cast<size_t>(c) * n1 + s1) * n2 + s2]; }
  /// Rejects negative entries, a wrong table size, alphabets above 16 and
  /// tables not summing to 1 within 1e-9.
  void Validate() const;
  /// Whether p(s1, s2 | c) = p(s1 | c) p(s2 | c) for every c with p(c) > 0.
  bool ConditionallyIndependent(double tol = 1e-12) const;

  /// p(c) p(s1|c) p(s2|c); rows of the conditionals are distributions.
  static DiscreteJoint FromFactors(const std::vector<double>& pc,
                                   const std::vector<std::vector<double>>& s1_given_c,
                                   const std::vector<std::vector<double>>& s2_given_c);
  /// Random factors (Dirichlet(1) rows) satisfying the independence premise.
  static DiscreteJoint Random(int nc, int n1, int n2, uint64_t seed);
};

/// Deterministic context map: cbar = rule(c, s1, s2).
using ContextRule = std::function<int(int c, int s1, int s2)>;

/// All quantities in bits.
struct MiBoundReport {
  double lhs = 0.0;  // I(c; s1)
  double rhs = 0.0;  // I(c; z) + H(s1) - H(z)
  bool holds = false;
  bool premise = false;  // s1 independent of s2 given c
  double i_cz = 0.0, h_s1 = 0.0, h_z = 0.0;
  // Chain decomposition with the context variable cbar.
  double i_c_cbar_s = 0.0;        // I(c; cbar, s1)
  double i_c_cbar_given_s = 0.0;  // I(c; cbar | s1)
  double chain_residual = 0.0;    // I(c;s1) - [I(c;cbar,s1) - I(c;cbar|s1)]
  double i_c_cbar = 0.0;
  double h_cbar_given_s = 0.0;
  double context_bound = 0.0;  // I(c;cbar) - H(cbar|s1)
  bool context_holds = false;

  nlohmann::json ToJson() const;
};

MiBoundReport MiBoundCheck(const DiscreteJoint& joint, const ContextRule& rule);

}  // namespace csp

#endif  // CSP_MI_BOUND_H_
