// csp/autograd.h

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

#ifndef CSP_AUTOGRAD_H_
#define CSP_AUTOGRAD_H_

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <vector>

namespace csp {

/// Row-major real matrix. Frame sequences are stored one frame per row.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// A vertex of the reverse-mode graph. Backward closures read the output
/// gradient and accumulate into the parents' gradients.
struct Node {
  Mat value;
  Mat grad;  // lazily sized on first accumulation
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node& self)> backward;

  void AccumulateGrad(const Mat& g);
  Mat& GradRef();  // zero-initialised gradient buffer
};

/// Handle to a graph node. Cheap to copy; shares the underlying node.
class Var {
 public:
  Var() = default;
  explicit Var(Mat value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Mat& value() const { return node_->value; }
  Mat& mutable_value() { return node_->value; }
  const Mat& grad() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  bool defined() const { return static_cast<bool>(node_); }
  void ZeroGrad();

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Runs backpropagation from a 1x1 root. Gradients accumulate into every
/// leaf that requires them.
void Backward(const Var& root);

/// Whether new operations record graph edges.
bool GradEnabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op output. When no parent requires a gradient (or grad mode is
/// off) the parents and closure are dropped so intermediate memory is freed.
Var MakeOp(Mat value, std::vector<Var> parents,
           std::function<void(Node& self)> backward);

}  // namespace csp

#endif  // CSP_AUTOGRAD_H_
