// SPDX-License-Identifier: Apache-2.0

#include "prnn/tape.hpp"

#include <algorithm>
#include <cmath>

namespace prnn {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const Tensor& Gradient::of(Var leaf) const {
  auto it = by_leaf_.find(leaf.id);
  if (it == by_leaf_.end()) {
    throw ContractError("gradient requested for a variable that is not a leaf of this tape");
  }
  return it->second;
}

size_t Tape::check(Var v) const {
  if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size()) {
    throw ContractError("variable does not belong to this tape");
  }
  return static_cast<size_t>(v.id);
}

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::leaf(Tensor value) {
  Node n{.op = Op::kLeaf, .value = std::move(value)};
  int id = push(std::move(n));
  leaf_ids_.push_back(id);
  return Var{id};
}

Var Tape::constant(Tensor value) {
  return Var{push(Node{.op = Op::kConst, .value = std::move(value)})};
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& va = val(static_cast<int>(check(a)));
  const Tensor& vb = val(static_cast<int>(check(b)));
  Tensor out = matmul_value(va, vb);
  return Var{push(Node{.op = Op::kMatMul, .a = a.id, .b = b.id, .value = std::move(out)})};
}

Var Tape::add(Var a, Var b) {
  const Tensor& va = val(static_cast<int>(check(a)));
  const Tensor& vb = val(static_cast<int>(check(b)));
  if (va.same_shape(vb)) {
    Tensor out = va;
    for (int64_t i = 0; i < out.size(); ++i) out.at(static_cast<int>(i)) += vb.data()[i];
    return Var{push(Node{.op = Op::kAdd, .a = a.id, .b = b.id, .value = std::move(out)})};
  }
  // bias add: [m x n] + [n], applied to every row
  if (va.rank() == 2 && vb.rank() == 1 && va.dim(1) == vb.dim(0)) {
    Tensor out = va;
    const int m = va.dim(0), n = va.dim(1);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) out.at(i, j) += vb.at(j);
    }
    return Var{push(Node{.op = Op::kAddBias, .a = a.id, .b = b.id, .value = std::move(out)})};
  }
  throw ShapeError("add cannot broadcast " + va.shape_str() + " with " + vb.shape_str());
}

Var Tape::sub(Var a, Var b) {
  const Tensor& va = val(static_cast<int>(check(a)));
  const Tensor& vb = val(static_cast<int>(check(b)));
  if (!va.same_shape(vb)) {
    throw ShapeError("sub requires identical shapes: " + va.shape_str() + " vs " + vb.shape_str());
  }
  Tensor out = va;
  for (int64_t i = 0; i < out.size(); ++i) out.at(static_cast<int>(i)) -= vb.data()[i];
  return Var{push(Node{.op = Op::kSub, .a = a.id, .b = b.id, .value = std::move(out)})};
}

Var Tape::mul(Var a, Var b) {
  const Tensor& va = val(static_cast<int>(check(a)));
  const Tensor& vb = val(static_cast<int>(check(b)));
  if (!va.same_shape(vb)) {
    throw ShapeError("mul requires identical shapes: " + va.shape_str() + " vs " + vb.shape_str());
  }
  Tensor out = va;
  for (int64_t i = 0; i < out.size(); ++i) out.at(static_cast<int>(i)) *= vb.data()[i];
  return Var{push(Node{.op = Op::kMul, .a = a.id, .b = b.id, .value = std::move(out)})};
}

Var Tape::tanh(Var a) {
  const Tensor& va = val(static_cast<int>(check(a)));
  Tensor out = va;
  for (int64_t i = 0; i < out.size(); ++i) {
    out.at(static_cast<int>(i)) = std::tanh(out.at(static_cast<int>(i)));
  }
  return Var{push(Node{.op = Op::kTanh, .a = a.id, .value = std::move(out)})};
}

Var Tape::sigmoid(Var a) {
  const Tensor& va = val(static_cast<int>(check(a)));
  Tensor out = va;
  for (int64_t i = 0; i < out.size(); ++i) {
    out.at(static_cast<int>(i)) = stable_sigmoid(out.at(static_cast<int>(i)));
  }
  return Var{push(Node{.op = Op::kSigmoid, .a = a.id, .value = std::move(out)})};
}

Var Tape::sum(Var a) {
  const Tensor& va = val(static_cast<int>(check(a)));
  double s = 0.0;
  for (int64_t i = 0; i < va.size(); ++i) s += va.data()[i];
  return Var{push(Node{.op = Op::kSumAll, .a = a.id, .value = Tensor{s}})};
}

Var Tape::mean(Var a) {
  const Tensor& va = val(static_cast<int>(check(a)));
  double s = 0.0;
  for (int64_t i = 0; i < va.size(); ++i) s += va.data()[i];
  return Var{push(
      Node{.op = Op::kMeanAll, .a = a.id, .value = Tensor{s / static_cast<double>(va.size())}})};
}

namespace {

Tensor reduce_axis(const Tensor& va, int axis, bool take_mean) {
  if (va.rank() > 2) throw ShapeError("axis reductions support rank 1-2, got " + va.shape_str());
  if (axis < 0 || axis >= va.rank()) {
    throw ShapeError("reduction axis " + std::to_string(axis) + " out of range for " +
                     va.shape_str());
  }
  if (va.rank() == 1) {
    double s = 0.0;
    for (int64_t i = 0; i < va.size(); ++i) s += va.data()[i];
    return Tensor{take_mean ? s / static_cast<double>(va.size()) : s};
  }
  const int m = va.dim(0), n = va.dim(1);
  if (axis == 0) {
    Tensor out(Shape{n});
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) out.at(j) += va.at(i, j);
    }
    if (take_mean) {
      for (int j = 0; j < n; ++j) out.at(j) /= m;
    }
    return out;
  }
  Tensor out(Shape{m});
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += va.at(i, j);
    out.at(i) = take_mean ? s / n : s;
  }
  return out;
}

}  // namespace

Var Tape::sum(Var a, int axis) {
  const Tensor& va = val(static_cast<int>(check(a)));
  return Var{push(
      Node{.op = Op::kSumAxis, .a = a.id, .axis = axis, .value = reduce_axis(va, axis, false)})};
}

Var Tape::mean(Var a, int axis) {
  const Tensor& va = val(static_cast<int>(check(a)));
  return Var{push(
      Node{.op = Op::kMeanAxis, .a = a.id, .axis = axis, .value = reduce_axis(va, axis, true)})};
}

Var Tape::scale(Var a, double k) {
  const Tensor& va = val(static_cast<int>(check(a)));
  Tensor out = va;
  for (int64_t i = 0; i < out.size(); ++i) out.at(static_cast<int>(i)) *= k;
  return Var{push(Node{.op = Op::kScale, .a = a.id, .k = k, .value = std::move(out)})};
}

Var Tape::cross_entropy(Var logits, const std::vector<int>& targets,
                        const std::vector<double>& mask) {
  const Tensor& vl = val(static_cast<int>(check(logits)));
  if (vl.rank() != 2) throw ShapeError("cross_entropy expects [B x K] logits, got " + vl.shape_str());
  const int rows = vl.dim(0), classes = vl.dim(1);
  if (static_cast<int>(targets.size()) != rows || static_cast<int>(mask.size()) != rows) {
    throw ContractError("cross_entropy: targets/mask length must equal the batch size");
  }
  Tensor probs(Shape{rows, classes});
  double loss = 0.0;
  for (int i = 0; i < rows; ++i) {
    double mx = vl.at(i, 0);
    for (int j = 1; j < classes; ++j) mx = std::max(mx, vl.at(i, j));
    double denom = 0.0;
    for (int j = 0; j < classes; ++j) denom += std::exp(vl.at(i, j) - mx);
    const double log_denom = std::log(denom);
    for (int j = 0; j < classes; ++j) {
      probs.at(i, j) = std::exp(vl.at(i, j) - mx) / denom;
    }
    if (mask[static_cast<size_t>(i)] != 0.0) {
      const int t = targets[static_cast<size_t>(i)];
      if (t < 0 || t >= classes) throw ContractError("cross_entropy: target id out of range");
      loss += mask[static_cast<size_t>(i)] * (log_denom - (vl.at(i, t) - mx));
    }
  }
  Node n{.op = Op::kCrossEntropy, .a = logits.id, .value = Tensor{loss}};
  n.probs = std::move(probs);
  n.targets = targets;
  n.mask = mask;
  return Var{push(std::move(n))};
}

Gradient Tape::backward(Var root) const {
  const size_t rid = check(root);
  if (!nodes_[rid].value.is_scalar()) {
    throw ContractError("backward requires a scalar root, got shape " +
                        nodes_[rid].value.shape_str());
  }

  // Gradients are scratch per sweep; a node's buffer is released as soon as
  // the node has pushed its contribution down, which keeps the peak footprint
  // near the live frontier instead of the whole tape.
  std::vector<Tensor> grad(rid + 1);
  std::vector<char> touched(rid + 1, 0);

  auto bump = [&](int id, auto&& apply) {
    auto uid = static_cast<size_t>(id);
    const Op op = nodes_[uid].op;
    if (op == Op::kConst) return;  // data inputs take no gradient
    if (!touched[uid]) {
      grad[uid] = Tensor::zeros(nodes_[uid].value.shape());
      touched[uid] = 1;
    }
    apply(grad[uid]);
  };

  grad[rid] = Tensor{1.0};
  touched[rid] = 1;

  Gradient result;
  for (int id : leaf_ids_) {
    if (static_cast<size_t>(id) <= rid) {
      result.by_leaf_.emplace(id, Tensor::zeros(nodes_[static_cast<size_t>(id)].value.shape()));
    }
  }

  for (size_t u = rid + 1; u-- > 0;) {
    if (!touched[u]) continue;
    const Node& node = nodes_[u];
    Tensor& g = grad[u];
    switch (node.op) {
      case Op::kLeaf:
        result.by_leaf_[static_cast<int>(u)] = std::move(g);
        break;
      case Op::kConst:
        break;
      case Op::kMatMul:
        bump(node.a, [&](Tensor& da) { gemm_acc(false, true, 1.0, g, val(node.b), da); });
        bump(node.b, [&](Tensor& db) { gemm_acc(true, false, 1.0, val(node.a), g, db); });
        break;
      case Op::kAdd:
        bump(node.a, [&](Tensor& da) {
          for (int64_t i = 0; i < g.size(); ++i) da.data()[i] += g.data()[i];
        });
        bump(node.b, [&](Tensor& db) {
          for (int64_t i = 0; i < g.size(); ++i) db.data()[i] += g.data()[i];
        });
        break;
      case Op::kAddBias:
        bump(node.a, [&](Tensor& da) {
          for (int64_t i = 0; i < g.size(); ++i) da.data()[i] += g.data()[i];
        });
        bump(node.b, [&](Tensor& db) {
          const int m = g.dim(0), n = g.dim(1);
          for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) db.at(j) += g.at(i, j);
          }
        });
        break;
      case Op::kSub:
        bump(node.a, [&](Tensor& da) {
          for (int64_t i = 0; i < g.size(); ++i) da.data()[i] += g.data()[i];
        });
        bump(node.b, [&](Tensor& db) {
          for (int64_t i = 0; i < g.size(); ++i) db.data()[i] -= g.data()[i];
        });
        break;
      case Op::kMul:
        bump(node.a, [&](Tensor& da) {
          const Tensor& vb = val(node.b);
          for (int64_t i = 0; i < g.size(); ++i) da.data()[i] += g.data()[i] * vb.data()[i];
        });
        bump(node.b, [&](Tensor& db) {
          const Tensor& va = val(node.a);
          for (int64_t i = 0; i < g.size(); ++i) db.data()[i] += g.data()[i] * va.data()[i];
        });
        break;
      case Op::kTanh:
        bump(node.a, [&](Tensor& da) {
          const Tensor& y = node.value;  // tanh' = 1 - tanh^2
          for (int64_t i = 0; i < g.size(); ++i) {
            da.data()[i] += g.data()[i] * (1.0 - y.data()[i] * y.data()[i]);
          }
        });
        break;
      case Op::kSigmoid:
        bump(node.a, [&](Tensor& da) {
          const Tensor& y = node.value;  // sigma' = sigma * (1 - sigma)
          for (int64_t i = 0; i < g.size(); ++i) {
            da.data()[i] += g.data()[i] * y.data()[i] * (1.0 - y.data()[i]);
          }
        });
        break;
      case Op::kSumAll:
        bump(node.a, [&](Tensor& da) {
          const double gv = g.data()[0];
          for (int64_t i = 0; i < da.size(); ++i) da.data()[i] += gv;
        });
        break;
      case Op::kMeanAll:
        bump(node.a, [&](Tensor& da) {
          const double gv = g.data()[0] / static_cast<double>(da.size());
          for (int64_t i = 0; i < da.size(); ++i) da.data()[i] += gv;
        });
        break;
      case Op::kSumAxis:
      case Op::kMeanAxis:
        bump(node.a, [&](Tensor& da) {
          const bool is_mean = node.op == Op::kMeanAxis;
          if (da.rank() == 1) {
            const double gv = g.data()[0] / (is_mean ? static_cast<double>(da.size()) : 1.0);
            for (int64_t i = 0; i < da.size(); ++i) da.data()[i] += gv;
            return;
          }
          const int m = da.dim(0), n = da.dim(1);
          if (node.axis == 0) {
            const double inv = is_mean ? 1.0 / m : 1.0;
            for (int i = 0; i < m; ++i) {
              for (int j = 0; j < n; ++j) da.at(i, j) += g.at(j) * inv;
            }
          } else {
            const double inv = is_mean ? 1.0 / n : 1.0;
            for (int i = 0; i < m; ++i) {
              for (int j = 0; j < n; ++j) da.at(i, j) += g.at(i) * inv;
            }
          }
        });
        break;
      case Op::kScale:
        bump(node.a, [&](Tensor& da) {
          for (int64_t i = 0; i < g.size(); ++i) da.data()[i] += node.k * g.data()[i];
        });
        break;
      case Op::kCrossEntropy:
        bump(node.a, [&](Tensor& da) {
          const double gv = g.data()[0];
          const int rows = da.dim(0), classes = da.dim(1);
          for (int i = 0; i < rows; ++i) {
            const double mi = node.mask[static_cast<size_t>(i)];
            if (mi == 0.0) continue;
            const int t = node.targets[static_cast<size_t>(i)];
            for (int j = 0; j < classes; ++j) {
              double p = node.probs.at(i, j);
              da.at(i, j) += gv * mi * (p - (j == t ? 1.0 : 0.0));
            }
          }
        });
        break;
    }
    if (node.op != Op::kLeaf) {
      g = Tensor();  // release scratch
    }
    touched[u] = 0;
  }
  return result;
}

}  // namespace prnn
