// SPDX-License-Identifier: Apache-2.0

#include "prnn/cells.hpp"

#include <array>

#include "prnn/rng.hpp"

namespace prnn {

const char* to_string(CellKind kind) {
  switch (kind) {
    case CellKind::kRnn: return "rnn";
    case CellKind::kIrnnId: return "irnn_id";
    case CellKind::kGru: return "gru";
    case CellKind::kLstm: return "lstm";
    case CellKind::kLstmPlus: return "lstm_plus";
    case CellKind::kPru: return "pru";
    case CellKind::kPruPlus: return "pru_plus";
  }
  return "?";
}

const std::vector<CellKind>& all_cell_kinds() {
  static const std::vector<CellKind> kinds = {
      CellKind::kRnn,  CellKind::kIrnnId,   CellKind::kGru, CellKind::kLstm,
      CellKind::kLstmPlus, CellKind::kPru, CellKind::kPruPlus};
  return kinds;
}

std::optional<CellKind> cell_kind_from(const std::string& name) {
  for (CellKind k : all_cell_kinds()) {
    if (name == to_string(k)) return k;
  }
  return std::nullopt;
}

std::string cell_kind_list() {
  std::string out;
  for (CellKind k : all_cell_kinds()) {
    if (!out.empty()) out += ", ";
    out += to_string(k);
  }
  return out;
}

namespace {

bool has_candidate_u(CellKind k) {
  return k == CellKind::kRnn || k == CellKind::kGru || k == CellKind::kLstm ||
         k == CellKind::kLstmPlus;
}

bool has_lstm_gates(CellKind k) {
  return k == CellKind::kLstm || k == CellKind::kLstmPlus || k == CellKind::kPru ||
         k == CellKind::kPruPlus;
}

bool has_output_layer(CellKind k) {
  return k == CellKind::kLstmPlus || k == CellKind::kPruPlus;
}

}  // namespace

void CellParams::for_each_param(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("W", W);
  if (has_candidate_u(kind)) fn("U", U);
  if (kind != CellKind::kGru || options.gru_candidate_bias) fn("b", b);
  if (has_lstm_gates(kind)) {
    fn("W_i", W_i); fn("U_i", U_i); fn("b_i", b_i);
    fn("W_f", W_f); fn("U_f", U_f); fn("b_f", b_f);
    fn("W_o", W_o); fn("U_o", U_o); fn("b_o", b_o);
  }
  if (kind == CellKind::kGru) {
    fn("W_r", W_r); fn("U_r", U_r); fn("b_r", b_r);
    fn("W_z", W_z); fn("U_z", U_z); fn("b_z", b_z);
  }
  if (has_output_layer(kind)) {
    fn("W_out", W_out);
    fn("b_out", b_out);
  }
}

void CellParams::for_each_param(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<CellParams*>(this)->for_each_param(
      [&](const std::string& name, Tensor& t) { fn(name, t); });
}

CellParams make_cell(CellKind kind, int input_dim, int hidden_dim, Rng& rng,
                     CellOptions options) {
  if (input_dim <= 0 || hidden_dim <= 0) {
    throw ContractError("cell dimensions must be positive");
  }
  CellParams p;
  p.kind = kind;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.options = options;

  const Shape in_shape{input_dim, hidden_dim};
  const Shape bias_shape{hidden_dim};
  auto input_weight = [&] { return Tensor::uniform(in_shape, rng, -0.08, 0.08); };
  auto recurrent = [&] { return Tensor::identity(hidden_dim); };
  auto bias = [&] { return Tensor::zeros(bias_shape); };

  p.W = input_weight();
  if (has_candidate_u(kind)) p.U = recurrent();
  if (kind != CellKind::kGru || options.gru_candidate_bias) p.b = bias();
  if (has_lstm_gates(kind)) {
    p.W_i = input_weight(); p.U_i = recurrent(); p.b_i = bias();
    p.W_f = input_weight(); p.U_f = recurrent();
    p.b_f = options.forget_bias_one ? Tensor::full(bias_shape, 1.0) : bias();
    p.W_o = input_weight(); p.U_o = recurrent(); p.b_o = bias();
  }
  if (kind == CellKind::kGru) {
    p.W_r = input_weight(); p.U_r = recurrent(); p.b_r = bias();
    p.W_z = input_weight(); p.U_z = recurrent(); p.b_z = bias();
  }
  if (has_output_layer(kind)) {
    p.W_out = Tensor::identity(hidden_dim);
    p.b_out = bias();
  }
  return p;
}

int64_t param_count(const CellParams& params) {
  int64_t total = 0;
  params.for_each_param([&](const std::string&, const Tensor& t) { total += t.size(); });
  return total;
}

int64_t param_count_formula(CellKind kind, int input_dim, int hidden_dim, CellOptions options) {
  const int64_t d = input_dim, n = hidden_dim;
  const int64_t affine = d * n + n * n + n;  // one full input+recurrent+bias block
  switch (kind) {
    case CellKind::kRnn: return affine;
    case CellKind::kIrnnId: return d * n + n;
    case CellKind::kGru: return 3 * affine - (options.gru_candidate_bias ? 0 : n);
    case CellKind::kLstm: return 4 * affine;
    case CellKind::kLstmPlus: return 4 * affine + n * n + n;
    case CellKind::kPru: return 4 * d * n + 3 * n * n + 4 * n;
    case CellKind::kPruPlus: return 4 * d * n + 3 * n * n + 4 * n + n * n + n;
  }
  return 0;
}

CellVars register_cell(Tape& tape, const CellParams& params, bool trainable,
                       std::vector<Var>* out_leaves) {
  CellVars cv;
  cv.kind = params.kind;
  cv.input_dim = params.input_dim;
  cv.hidden_dim = params.hidden_dim;
  cv.options = params.options;

  std::array<std::pair<const char*, Var*>, 20> slots = {{
      {"W", &cv.W},     {"U", &cv.U},     {"b", &cv.b},
      {"W_i", &cv.W_i}, {"U_i", &cv.U_i}, {"b_i", &cv.b_i},
      {"W_f", &cv.W_f}, {"U_f", &cv.U_f}, {"b_f", &cv.b_f},
      {"W_o", &cv.W_o}, {"U_o", &cv.U_o}, {"b_o", &cv.b_o},
      {"W_r", &cv.W_r}, {"U_r", &cv.U_r}, {"b_r", &cv.b_r},
      {"W_z", &cv.W_z}, {"U_z", &cv.U_z}, {"b_z", &cv.b_z},
      {"W_out", &cv.W_out}, {"b_out", &cv.b_out},
  }};
  params.for_each_param([&](const std::string& name, const Tensor& t) {
    for (auto& [slot_name, var] : slots) {
      if (name == slot_name) {
        *var = trainable ? tape.leaf(t) : tape.constant(t);
        if (out_leaves) out_leaves->push_back(*var);
        return;
      }
    }
    throw ContractError("unknown cell parameter " + name);
  });
  return cv;
}

VarState initial_state(Tape& tape, int batch, int hidden_dim) {
  Var h = tape.constant(Tensor::zeros(Shape{batch, hidden_dim}));
  Var c = tape.constant(Tensor::zeros(Shape{batch, hidden_dim}));
  return VarState{h, c};
}

namespace {

// sigmoid(W_g x + U_g h + b_g); shared by every gated cell so that variants
// with identical gate parameters produce identical values.
Var gate(Tape& t, Var x, Var h, Var w, Var u, Var b) {
  return t.sigmoid(t.add(t.add(t.matmul(x, w), t.matmul(h, u)), b));
}

}  // namespace

VarState step_rnn(Tape& t, const CellVars& cv, VarState s, Var x) {
  Var pre = t.add(t.add(t.matmul(x, cv.W), t.matmul(s.h, cv.U)), cv.b);
  return VarState{t.tanh(pre), s.c};
}

VarState step_irnn_id(Tape& t, const CellVars& cv, VarState s, Var x) {
  Var pre = t.add(t.add(t.matmul(x, cv.W), s.h), cv.b);
  return VarState{t.tanh(pre), s.c};
}

VarState step_gru(Tape& t, const CellVars& cv, VarState s, Var x) {
  Var r = gate(t, x, s.h, cv.W_r, cv.U_r, cv.b_r);
  Var z = gate(t, x, s.h, cv.W_z, cv.U_z, cv.b_z);
  Var cand_pre = t.add(t.matmul(x, cv.W), t.matmul(t.mul(r, s.h), cv.U));
  if (cv.options.gru_candidate_bias) cand_pre = t.add(cand_pre, cv.b);
  Var cand = t.tanh(cand_pre);
  const Tensor& hv = t.value(s.h);
  Var ones = t.constant(Tensor::full(hv.shape(), 1.0));
  Var h_next = t.add(t.mul(t.sub(ones, z), s.h), t.mul(z, cand));
  return VarState{h_next, s.c};
}

namespace {

// Shared memory-cell update: c' = f.c + i.tanh(candidate_pre), h^ = o.tanh(c').
VarState gated_memory(Tape& t, const CellVars& cv, VarState s, Var x, Var cand_pre) {
  Var i = gate(t, x, s.h, cv.W_i, cv.U_i, cv.b_i);
  Var f = gate(t, x, s.h, cv.W_f, cv.U_f, cv.b_f);
  Var o = gate(t, x, s.h, cv.W_o, cv.U_o, cv.b_o);
  Var c_next = t.add(t.mul(f, s.c), t.mul(i, t.tanh(cand_pre)));
  Var h_hat = t.mul(o, t.tanh(c_next));
  return VarState{h_hat, c_next};
}

Var output_layer(Tape& t, const CellVars& cv, Var h_hat) {
  return t.tanh(t.add(t.matmul(h_hat, cv.W_out), cv.b_out));
}

}  // namespace

VarState step_lstm(Tape& t, const CellVars& cv, VarState s, Var x) {
  Var cand_pre = t.add(t.add(t.matmul(s.h, cv.U), t.matmul(x, cv.W)), cv.b);
  return gated_memory(t, cv, s, x, cand_pre);
}

VarState step_pru(Tape& t, const CellVars& cv, VarState s, Var x) {
  Var cand_pre = t.add(t.matmul(x, cv.W), cv.b);
  return gated_memory(t, cv, s, x, cand_pre);
}

VarState step_pru_plus(Tape& t, const CellVars& cv, VarState s, Var x) {
  VarState inner = step_pru(t, cv, s, x);
  return VarState{output_layer(t, cv, inner.h), inner.c};
}

VarState step_lstm_plus(Tape& t, const CellVars& cv, VarState s, Var x) {
  VarState inner = step_lstm(t, cv, s, x);
  return VarState{output_layer(t, cv, inner.h), inner.c};
}

VarState step(Tape& t, const CellVars& cv, VarState s, Var x) {
  switch (cv.kind) {
    case CellKind::kRnn: return step_rnn(t, cv, s, x);
    case CellKind::kIrnnId: return step_irnn_id(t, cv, s, x);
    case CellKind::kGru: return step_gru(t, cv, s, x);
    case CellKind::kLstm: return step_lstm(t, cv, s, x);
    case CellKind::kLstmPlus: return step_lstm_plus(t, cv, s, x);
    case CellKind::kPru: return step_pru(t, cv, s, x);
    case CellKind::kPruPlus: return step_pru_plus(t, cv, s, x);
  }
  throw ContractError("unknown cell kind");
}

std::vector<VarState> unroll_vars(Tape& t, const CellVars& cv, const std::vector<Var>& xs,
                                  const Tensor* mask) {
  if (xs.empty()) throw ContractError("unroll over an empty sequence");
  const int batch = t.value(xs[0]).dim(0);
  const int steps = static_cast<int>(xs.size());
  if (mask) {
    if (mask->rank() != 2 || mask->dim(0) != batch || mask->dim(1) != steps) {
      throw ShapeError("mask shape " + mask->shape_str() + " does not match batch " +
                       std::to_string(batch) + ", steps " + std::to_string(steps));
    }
  }

  std::vector<VarState> out;
  out.reserve(xs.size());
  VarState state = initial_state(t, batch, cv.hidden_dim);
  for (int step_idx = 0; step_idx < steps; ++step_idx) {
    VarState next = step(t, cv, state, xs[static_cast<size_t>(step_idx)]);
    if (mask) {
      bool all_on = true, all_off = true;
      for (int bi = 0; bi < batch; ++bi) {
        const double mv = mask->at(bi, step_idx);
        if (mv == 0.0) all_on = false; else all_off = false;
      }
      if (all_off) {
        next = state;
      } else if (!all_on) {
        // blend: rows with mask 0 keep the previous state
        Tensor keep(Shape{batch, cv.hidden_dim});
        Tensor carry(Shape{batch, cv.hidden_dim});
        for (int bi = 0; bi < batch; ++bi) {
          const double mv = mask->at(bi, step_idx);
          for (int j = 0; j < cv.hidden_dim; ++j) {
            keep.at(bi, j) = mv;
            carry.at(bi, j) = 1.0 - mv;
          }
        }
        Var keep_v = t.constant(std::move(keep));
        Var carry_v = t.constant(std::move(carry));
        Var h = t.add(t.mul(keep_v, next.h), t.mul(carry_v, state.h));
        Var c = t.add(t.mul(keep_v, next.c), t.mul(carry_v, state.c));
        next = VarState{h, c};
      }
    }
    state = next;
    out.push_back(state);
  }
  return out;
}

std::vector<VarState> unroll(Tape& t, const CellVars& cv, const Tensor& x_seq,
                             const Tensor* mask) {
  if (x_seq.rank() != 3) {
    throw ShapeError("unroll expects [batch x T x d] input, got " + x_seq.shape_str());
  }
  if (x_seq.dim(2) != cv.input_dim) {
    throw ShapeError("input feature dim " + std::to_string(x_seq.dim(2)) +
                     " does not match cell input dim " + std::to_string(cv.input_dim));
  }
  std::vector<Var> xs;
  xs.reserve(static_cast<size_t>(x_seq.dim(1)));
  for (int step_idx = 0; step_idx < x_seq.dim(1); ++step_idx) {
    xs.push_back(t.constant(x_seq.time_slice(step_idx)));
  }
  return unroll_vars(t, cv, xs, mask);
}

}  // namespace prnn
