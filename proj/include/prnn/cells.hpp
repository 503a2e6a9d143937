// SPDX-License-Identifier: Apache-2.0
//
// Recurrent cell variants as pure step functions over tape variables:
//
//   rnn        h' = tanh(W x + U h + b)
//   irnn_id    h' = tanh(W x + h + b)                 (no recurrent matrix)
//   gru        h' = (1-z) . h + z . tanh(W x + U (r . h) + b)
//   lstm       c' = f . c + i . tanh(U h + W x + b);  h' = o . tanh(c')
//   pru        c' = f . c + i . tanh(W x + b);        h' = o . tanh(c')
//   pru_plus   as pru, then h' = tanh(W_out h^ + b_out)
//   lstm_plus  as lstm, then h' = tanh(W_out h^ + b_out)
//
// Gates are sigmoid(W_g x + U_g h + b_g) throughout; pru keeps the full gate
// equations and only drops U from the candidate path, so its memory cell
// carries past information without rotation or reflection.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "prnn/tape.hpp"
#include "prnn/tensor.hpp"

namespace prnn {

class Rng;

enum class CellKind { kRnn, kIrnnId, kGru, kLstm, kLstmPlus, kPru, kPruPlus };

const char* to_string(CellKind kind);
std::optional<CellKind> cell_kind_from(const std::string& name);
const std::vector<CellKind>& all_cell_kinds();
std::string cell_kind_list();  // "rnn, irnn_id, gru, ..." for diagnostics

struct CellOptions {
  bool forget_bias_one = false;     // start with the forget gate biased open
  bool gru_candidate_bias = true;   // strict mode drops the candidate bias
};

// All learnable tensors of one cell. Which members are populated depends on
// the kind; for_each_param visits exactly the populated ones, in a fixed
// order shared by initialization, the optimizer and checkpoints.
struct CellParams {
  CellKind kind = CellKind::kLstm;
  int input_dim = 0;
  int hidden_dim = 0;
  CellOptions options;

  Tensor W, U, b;           // candidate path (U absent for irnn_id/pru/pru_plus)
  Tensor W_i, U_i, b_i;     // input gate
  Tensor W_f, U_f, b_f;     // forget gate
  Tensor W_o, U_o, b_o;     // output gate
  Tensor W_r, U_r, b_r;     // reset gate (gru)
  Tensor W_z, U_z, b_z;     // update gate (gru)
  Tensor W_out, b_out;      // output layer (pru_plus/lstm_plus), identity-initialized

  void for_each_param(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each_param(const std::function<void(const std::string&, const Tensor&)>& fn) const;
};

// Input weights uniform on [-0.08, 0.08]; recurrent matrices start as the
// identity; biases zero (forget bias 1 when the option asks for it); W_out
// identity, b_out zero.
CellParams make_cell(CellKind kind, int input_dim, int hidden_dim, Rng& rng,
                     CellOptions options = {});

// Learnable scalars in a cell, by direct count and by closed form. The two
// must agree; tests hold both routes to the stated formulas.
int64_t param_count(const CellParams& params);
int64_t param_count_formula(CellKind kind, int input_dim, int hidden_dim,
                            CellOptions options = {});

// Tape-side mirror of CellParams.
struct CellVars {
  CellKind kind = CellKind::kLstm;
  int input_dim = 0;
  int hidden_dim = 0;
  CellOptions options;
  Var W, U, b;
  Var W_i, U_i, b_i;
  Var W_f, U_f, b_f;
  Var W_o, U_o, b_o;
  Var W_r, U_r, b_r;
  Var W_z, U_z, b_z;
  Var W_out, b_out;
};

// Registers every parameter as a differentiable leaf (or as constants for
// gradient-free evaluation), in for_each_param order. When out_leaves is
// given the created variables are appended to it in the same order.
CellVars register_cell(Tape& tape, const CellParams& params, bool trainable = true,
                       std::vector<Var>* out_leaves = nullptr);

struct VarState {
  Var h, c;
};

// Zero initial state [batch x hidden].
VarState initial_state(Tape& tape, int batch, int hidden_dim);

VarState step_rnn(Tape& tape, const CellVars& cv, VarState s, Var x);
VarState step_irnn_id(Tape& tape, const CellVars& cv, VarState s, Var x);
VarState step_gru(Tape& tape, const CellVars& cv, VarState s, Var x);
VarState step_lstm(Tape& tape, const CellVars& cv, VarState s, Var x);
VarState step_pru(Tape& tape, const CellVars& cv, VarState s, Var x);
VarState step_pru_plus(Tape& tape, const CellVars& cv, VarState s, Var x);
VarState step_lstm_plus(Tape& tape, const CellVars& cv, VarState s, Var x);

// Dispatch on cv.kind.
VarState step(Tape& tape, const CellVars& cv, VarState s, Var x);

// Applies the cell across x_seq [batch x T x d] from the zero state and
// returns the state after every step. Where mask is 0 the state carries
// through unchanged. mask is [batch x T] over {0,1}; pass nullptr for none.
std::vector<VarState> unroll(Tape& tape, const CellVars& cv, const Tensor& x_seq,
                             const Tensor* mask = nullptr);

// Same, over pre-registered per-step inputs; throws ContractError when empty.
std::vector<VarState> unroll_vars(Tape& tape, const CellVars& cv, const std::vector<Var>& xs,
                                  const Tensor* mask = nullptr);

}  // namespace prnn
