// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over an append-only tape. Every
// forward operation records the values its adjoint rule needs; one backward
// sweep from a scalar root fills exactly one gradient per leaf.
//
// A tape is rebuilt for every training step. Records are appended in
// topological order by construction (an operation can only reference
// already-recorded operands), so the backward sweep is a single reverse pass.

#pragma once

#include <cstdint>
#include <deque>
#include <unordered_map>
#include <vector>

#include "prnn/tensor.hpp"

namespace prnn {

// Handle to a tape record. Only meaningful together with the tape that
// produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Per-leaf gradient tensors, shaped like their leaves. Leaves the root never
// reached report zero.
class Gradient {
 public:
  const Tensor& of(Var leaf) const;
  bool contains(Var leaf) const { return by_leaf_.count(leaf.id) != 0; }

 private:
  friend class Tape;
  std::unordered_map<int, Tensor> by_leaf_;
};

class Tape {
 public:
  // Differentiable input; backward() reports a gradient for it.
  Var leaf(Tensor value);
  // Non-differentiable input (data, masks, targets).
  Var constant(Tensor value);

  // a[m x k] * b[k x n] -> [m x n]. Adjoints dA = G*B^T, dB = A^T*G.
  Var matmul(Var a, Var b);

  // Elementwise; shapes must match exactly, except add() also accepts a
  // rank-1 bias against the rows of a rank-2 matrix. Any other broadcast is a
  // shape error.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);

  Var tanh(Var a);
  Var sigmoid(Var a);

  // Whole-tensor reductions to a scalar, and single-axis reductions on
  // rank-1/2 tensors.
  Var sum(Var a);
  Var mean(Var a);
  Var sum(Var a, int axis);
  Var mean(Var a, int axis);

  // Multiply by a compile-time constant (loss averaging).
  Var scale(Var a, double k);

  // Masked softmax cross-entropy over the rows of logits [B x K]:
  //   sum_b mask[b] * (-log softmax(logits[b])[target[b]])
  // as a scalar. Log-softmax is computed with a row-max shift. Fused into a
  // single record with adjoint mask[b] * (softmax - onehot).
  Var cross_entropy(Var logits, const std::vector<int>& targets, const std::vector<double>& mask);

  // Stable for the tape's lifetime: records live in a deque, so recording
  // further operations never moves them.
  const Tensor& value(Var v) const { return nodes_[check(v)].value; }

  // Reverse sweep from a scalar root. Non-destructive: calling it again on
  // the same tape yields bitwise-identical gradients.
  Gradient backward(Var root) const;

  size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op : uint8_t {
    kLeaf,
    kConst,
    kMatMul,
    kAdd,
    kAddBias,
    kSub,
    kMul,
    kTanh,
    kSigmoid,
    kSumAll,
    kMeanAll,
    kSumAxis,
    kMeanAxis,
    kScale,
    kCrossEntropy,
  };

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    int axis = -1;
    double k = 0.0;
    Tensor value;
    // kCrossEntropy keeps the row distribution and mask for its adjoint.
    Tensor probs;
    std::vector<int> targets;
    std::vector<double> mask;
  };

  int push(Node n);
  size_t check(Var v) const;
  const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }

  std::deque<Node> nodes_;
  std::vector<int> leaf_ids_;
};

}  // namespace prnn
