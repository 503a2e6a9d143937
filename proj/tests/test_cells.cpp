// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "prnn/cells.hpp"
#include "prnn/harness.hpp"
#include "prnn/rng.hpp"
#include "testutil.hpp"

using namespace prnn;

namespace {

constexpr int kD = 4;
constexpr int kN = 8;
constexpr int kB = 3;

CellParams cell_of(CellKind kind, uint64_t seed = 17) {
  Rng rng(seed);
  return make_cell(kind, kD, kN, rng);
}

VarState random_state(Tape& t, Rng& rng, double lo = -0.8, double hi = 0.8) {
  return VarState{t.constant(Tensor::uniform(Shape{kB, kN}, rng, lo, hi)),
                  t.constant(Tensor::uniform(Shape{kB, kN}, rng, lo, hi))};
}

Var random_input(Tape& t, Rng& rng) {
  return t.constant(Tensor::uniform(Shape{kB, kD}, rng, -1.0, 1.0));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double worst = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

}  // namespace

TEST_CASE("rnn fixed point and tanh carry") {
  CellParams p = cell_of(CellKind::kRnn);
  p.W = Tensor::zeros(Shape{kD, kN});  // U stays identity, b zero

  Tape t;
  CellVars cv = register_cell(t, p, false);
  Rng rng(2);
  Var x = random_input(t, rng);

  VarState zero = initial_state(t, kB, kN);
  CHECK(t.value(step_rnn(t, cv, zero, x).h) == Tensor::zeros(Shape{kB, kN}));

  Tensor v = Tensor::uniform(Shape{kB, kN}, rng, -1.0, 1.0);
  VarState s{t.constant(v), t.constant(Tensor::zeros(Shape{kB, kN}))};
  Tensor h = t.value(step_rnn(t, cv, s, x).h);
  for (int i = 0; i < kB; ++i) {
    for (int j = 0; j < kN; ++j) {
      CHECK(h.at(i, j) == doctest::Approx(std::tanh(v.at(i, j))).epsilon(1e-12));
    }
  }
}

TEST_CASE("rnn gradient of sum(h') w.r.t. U matches finite differences") {
  CellParams p = cell_of(CellKind::kRnn, 23);
  Rng rng(5);
  const Tensor h0 = Tensor::uniform(Shape{kB, kN}, rng, -0.5, 0.5);
  const Tensor x0 = Tensor::uniform(Shape{kB, kD}, rng, -1.0, 1.0);

  auto loss = [&] {
    Tape t;
    CellVars cv = register_cell(t, p, false);
    VarState s{t.constant(h0), t.constant(Tensor::zeros(Shape{kB, kN}))};
    return t.value(t.sum(step_rnn(t, cv, s, t.constant(x0)).h)).scalar();
  };

  Tape t;
  std::vector<Var> leaves;
  CellVars cv = register_cell(t, p, true, &leaves);
  VarState s{t.constant(h0), t.constant(Tensor::zeros(Shape{kB, kN}))};
  Gradient g = t.backward(t.sum(step_rnn(t, cv, s, t.constant(x0)).h));
  CHECK(testutil::max_grad_rel_err(p.U, g.of(leaves[1]), loss) < 1e-4);
}

TEST_CASE("irnn_id has no recurrent matrix and carries through tanh") {
  CellParams p = cell_of(CellKind::kIrnnId);
  p.W = Tensor::zeros(Shape{kD, kN});
  CHECK(p.U.empty());
  CHECK(param_count(p) == param_count_formula(CellKind::kRnn, kD, kN) - kN * kN);

  Tape t;
  CellVars cv = register_cell(t, p, false);
  Rng rng(3);
  Var x = random_input(t, rng);
  CHECK(t.value(step_irnn_id(t, cv, initial_state(t, kB, kN), x).h) ==
        Tensor::zeros(Shape{kB, kN}));

  Tensor v = Tensor::uniform(Shape{kB, kN}, rng, -1.0, 1.0);
  VarState s{t.constant(v), t.constant(Tensor::zeros(Shape{kB, kN}))};
  Tensor h = t.value(step_irnn_id(t, cv, s, x).h);
  for (int i = 0; i < kB; ++i) {
    for (int j = 0; j < kN; ++j) {
      CHECK(h.at(i, j) == doctest::Approx(std::tanh(v.at(i, j))).epsilon(1e-12));
    }
  }
}

TEST_CASE("gru gate saturation") {
  Rng rng(7);

  SUBCASE("update gate forced shut keeps the previous state") {
    CellParams p = cell_of(CellKind::kGru);
    p.b_z = Tensor::full(Shape{kN}, -30.0);
    Tape t;
    CellVars cv = register_cell(t, p, false);
    VarState s = random_state(t, rng);
    Var x = random_input(t, rng);
    CHECK(max_abs_diff(t.value(step_gru(t, cv, s, x).h), t.value(s.h)) < 1e-9);
  }

  SUBCASE("update gate open with reset shut yields tanh(Wx + b)") {
    CellParams p = cell_of(CellKind::kGru);
    p.b_z = Tensor::full(Shape{kN}, 30.0);
    p.b_r = Tensor::full(Shape{kN}, -30.0);
    Tape t;
    CellVars cv = register_cell(t, p, false);
    VarState s = random_state(t, rng);
    Tensor xv = Tensor::uniform(Shape{kB, kD}, rng, -1.0, 1.0);
    Tensor h = t.value(step_gru(t, cv, s, t.constant(xv)).h);
    Tensor expected =
        t.value(t.tanh(t.add(t.matmul(t.constant(xv), t.constant(p.W)), t.constant(p.b))));
    CHECK(max_abs_diff(h, expected) < 1e-9);
  }
}

TEST_CASE("lstm gate saturation") {
  Rng rng(11);

  SUBCASE("open forget and shut input gate preserve the memory cell") {
    CellParams p = cell_of(CellKind::kLstm);
    p.b_f = Tensor::full(Shape{kN}, 30.0);
    p.b_i = Tensor::full(Shape{kN}, -30.0);
    Tape t;
    CellVars cv = register_cell(t, p, false);
    VarState s = random_state(t, rng);
    Var x = random_input(t, rng);
    CHECK(max_abs_diff(t.value(step_lstm(t, cv, s, x).c), t.value(s.c)) < 1e-9);
  }

  SUBCASE("shut output gate silences the hidden state") {
    CellParams p = cell_of(CellKind::kLstm);
    p.b_o = Tensor::full(Shape{kN}, -30.0);
    Tape t;
    CellVars cv = register_cell(t, p, false);
    VarState s = random_state(t, rng);
    Var x = random_input(t, rng);
    Tensor h = t.value(step_lstm(t, cv, s, x).h);
    for (int64_t i = 0; i < h.size(); ++i) CHECK(std::abs(h.data()[i]) < 1e-9);
  }
}

TEST_CASE("pru persistence under saturated gates") {
  Rng rng(13);
  for (CellKind kind : {CellKind::kPru, CellKind::kPruPlus}) {
    CAPTURE(to_string(kind));
    CellParams p = cell_of(kind);
    p.b_f = Tensor::full(Shape{kN}, 40.0);
    p.b_i = Tensor::full(Shape{kN}, -40.0);
    Tape t;
    CellVars cv = register_cell(t, p, false);
    VarState s = random_state(t, rng);
    const Tensor c0 = t.value(s.c);
    // 1000 steps of arbitrary inputs; the cell must hold its memory
    for (int i = 0; i < 1000; ++i) {
      s = step(t, cv, s, random_input(t, rng));
    }
    CHECK(max_abs_diff(t.value(s.c), c0) < 1e-8);
  }
}

TEST_CASE("pru equals lstm with a zero candidate recurrence, bitwise") {
  Rng rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    CellParams pru = cell_of(CellKind::kPru, 100 + static_cast<uint64_t>(trial));
    // pru parameters plus U = 0 define the matching lstm
    CellParams lstm = pru;
    lstm.kind = CellKind::kLstm;
    lstm.U = Tensor::zeros(Shape{kN, kN});

    Tape t;
    CellVars pru_vars = register_cell(t, pru, false);
    CellVars lstm_vars = register_cell(t, lstm, false);
    VarState s = random_state(t, rng);
    Var x = random_input(t, rng);
    VarState a = step_pru(t, pru_vars, s, x);
    VarState b = step_lstm(t, lstm_vars, s, x);
    CHECK(t.value(a.h) == t.value(b.h));
    CHECK(t.value(a.c) == t.value(b.c));
  }
}

TEST_CASE("pru_plus equals lstm_plus with a zero candidate recurrence, bitwise") {
  Rng rng(29);
  for (int trial = 0; trial < 100; ++trial) {
    CellParams pp = cell_of(CellKind::kPruPlus, 200 + static_cast<uint64_t>(trial));
    CellParams lp = pp;
    lp.kind = CellKind::kLstmPlus;
    lp.U = Tensor::zeros(Shape{kN, kN});

    Tape t;
    CellVars pp_vars = register_cell(t, pp, false);
    CellVars lp_vars = register_cell(t, lp, false);
    VarState s = random_state(t, rng);
    Var x = random_input(t, rng);
    VarState a = step_pru_plus(t, pp_vars, s, x);
    VarState b = step_lstm_plus(t, lp_vars, s, x);
    CHECK(t.value(a.h) == t.value(b.h));
    CHECK(t.value(a.c) == t.value(b.c));
  }
}

TEST_CASE("output layer at identity init is a near-identity on small activations") {
  Rng rng(31);
  CellParams pp = cell_of(CellKind::kPruPlus);
  CellParams pru = pp;
  pru.kind = CellKind::kPru;

  Tape t;
  CellVars pp_vars = register_cell(t, pp, false);
  CellVars pru_vars = register_cell(t, pru, false);
  // tiny input and state keep h^ small, so tanh(W_out h^ + 0) ~ h^ + O(h^3)
  VarState s{t.constant(Tensor::uniform(Shape{kB, kN}, rng, -1e-3, 1e-3)),
             t.constant(Tensor::uniform(Shape{kB, kN}, rng, -1e-3, 1e-3))};
  Var x = t.constant(Tensor::uniform(Shape{kB, kD}, rng, -1e-3, 1e-3));
  Tensor h_plus = t.value(step_pru_plus(t, pp_vars, s, x).h);
  Tensor h_hat = t.value(step_pru(t, pru_vars, s, x).h);
  for (int64_t i = 0; i < h_plus.size(); ++i) {
    const double hv = h_hat.data()[i];
    CHECK(std::abs(h_plus.data()[i] - hv) <= std::abs(hv * hv * hv) + 1e-15);
  }
}

TEST_CASE("lstm_plus tracks lstm at identity output init on small activations") {
  Rng rng(37);
  CellParams lp = cell_of(CellKind::kLstmPlus);
  CellParams lstm = lp;
  lstm.kind = CellKind::kLstm;

  Tape t;
  CellVars lp_vars = register_cell(t, lp, false);
  CellVars lstm_vars = register_cell(t, lstm, false);
  VarState s{t.constant(Tensor::uniform(Shape{kB, kN}, rng, -1e-3, 1e-3)),
             t.constant(Tensor::uniform(Shape{kB, kN}, rng, -1e-3, 1e-3))};
  Var x = t.constant(Tensor::uniform(Shape{kB, kD}, rng, -1e-3, 1e-3));
  Tensor a = t.value(step_lstm_plus(t, lp_vars, s, x).h);
  Tensor b = t.value(step_lstm(t, lstm_vars, s, x).h);
  for (int64_t i = 0; i < a.size(); ++i) {
    const double hv = b.data()[i];
    CHECK(std::abs(a.data()[i] - hv) <= std::abs(hv * hv * hv) + 1e-15);
  }
}

TEST_CASE("parameter counts match the closed forms") {
  const int64_t d = kD, n = kN;
  const int64_t affine = d * n + n * n + n;
  CHECK(param_count_formula(CellKind::kLstm, kD, kN) == 4 * affine);
  CHECK(param_count_formula(CellKind::kPru, kD, kN) == 4 * d * n + 3 * n * n + 4 * n);
  CHECK(param_count_formula(CellKind::kPruPlus, kD, kN) ==
        param_count_formula(CellKind::kPru, kD, kN) + n * n + n);
  CHECK(param_count_formula(CellKind::kLstmPlus, kD, kN) == 4 * affine + n * n + n);
  CHECK(param_count_formula(CellKind::kGru, kD, kN) == 3 * affine);
  CHECK(param_count_formula(CellKind::kRnn, kD, kN) == affine);
  CHECK(param_count_formula(CellKind::kIrnnId, kD, kN) == d * n + n);

  for (CellKind kind : all_cell_kinds()) {
    CAPTURE(to_string(kind));
    CHECK(param_count(cell_of(kind)) == param_count_formula(kind, kD, kN));
  }

  CellOptions strict;
  strict.gru_candidate_bias = false;
  Rng rng(41);
  CellParams strict_gru = make_cell(CellKind::kGru, kD, kN, rng, strict);
  CHECK(param_count(strict_gru) == 3 * affine - n);
  CHECK(param_count(strict_gru) == param_count_formula(CellKind::kGru, kD, kN, strict));
}

TEST_CASE("forget bias option initializes b_f to one") {
  Rng rng(43);
  CellOptions opts;
  opts.forget_bias_one = true;
  CellParams p = make_cell(CellKind::kLstm, kD, kN, rng, opts);
  CHECK(p.b_f == Tensor::full(Shape{kN}, 1.0));
  CellParams plain = cell_of(CellKind::kLstm);
  CHECK(plain.b_f == Tensor::zeros(Shape{kN}));
}

TEST_CASE("step functions are pure: same inputs, same outputs") {
  Rng rng(47);
  for (CellKind kind : all_cell_kinds()) {
    CellParams p = cell_of(kind, 300);
    const Tensor h0 = Tensor::uniform(Shape{kB, kN}, rng, -0.5, 0.5);
    const Tensor c0 = Tensor::uniform(Shape{kB, kN}, rng, -0.5, 0.5);
    const Tensor x0 = Tensor::uniform(Shape{kB, kD}, rng, -1.0, 1.0);
    auto run = [&] {
      Tape t;
      CellVars cv = register_cell(t, p, false);
      VarState s{t.constant(h0), t.constant(c0)};
      VarState out = step(t, cv, s, t.constant(x0));
      return std::pair{t.value(out.h), t.value(out.c)};
    };
    auto a = run();
    auto b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
  }
}

TEST_CASE("unroll with an all-zero mask never leaves the zero state") {
  CellParams p = cell_of(CellKind::kLstm);
  Rng rng(53);
  Tensor x = Tensor::uniform(Shape{kB, 5, kD}, rng, -1.0, 1.0);
  Tensor mask = Tensor::zeros(Shape{kB, 5});
  Tape t;
  CellVars cv = register_cell(t, p, false);
  auto states = unroll(t, cv, x, &mask);
  for (const VarState& s : states) {
    CHECK(t.value(s.h) == Tensor::zeros(Shape{kB, kN}));
    CHECK(t.value(s.c) == Tensor::zeros(Shape{kB, kN}));
  }
}

TEST_CASE("unroll of one step equals a single step call") {
  CellParams p = cell_of(CellKind::kPru);
  Rng rng(59);
  Tensor x = Tensor::uniform(Shape{kB, 1, kD}, rng, -1.0, 1.0);
  Tape t;
  CellVars cv = register_cell(t, p, false);
  auto states = unroll(t, cv, x);
  VarState manual = step(t, cv, initial_state(t, kB, kN), t.constant(x.time_slice(0)));
  CHECK(t.value(states[0].h) == t.value(manual.h));
  CHECK(t.value(states[0].c) == t.value(manual.c));
}

TEST_CASE("unroll equals a manual step loop bitwise, including masked carry") {
  for (CellKind kind : all_cell_kinds()) {
    CAPTURE(to_string(kind));
    CellParams p = cell_of(kind, 400);
    Rng rng(61);
    const int steps = 6;
    Tensor x = Tensor::uniform(Shape{kB, steps, kD}, rng, -1.0, 1.0);
    Tensor mask(Shape{kB, steps});
    for (int b = 0; b < kB; ++b) {
      for (int s = 0; s < steps; ++s) mask.at(b, s) = rng.uniform01() < 0.7 ? 1.0 : 0.0;
    }

    Tape t;
    CellVars cv = register_cell(t, p, false);
    auto states = unroll(t, cv, x, &mask);

    VarState s = initial_state(t, kB, kN);
    for (int step_idx = 0; step_idx < steps; ++step_idx) {
      VarState next = step(t, cv, s, t.constant(x.time_slice(step_idx)));
      Tensor h = t.value(next.h), c = t.value(next.c);
      Tensor hp = t.value(s.h), cp = t.value(s.c);
      Tensor h_blend(Shape{kB, kN}), c_blend(Shape{kB, kN});
      for (int b = 0; b < kB; ++b) {
        const double mv = mask.at(b, step_idx);
        for (int j = 0; j < kN; ++j) {
          h_blend.at(b, j) = mv * h.at(b, j) + (1.0 - mv) * hp.at(b, j);
          c_blend.at(b, j) = mv * c.at(b, j) + (1.0 - mv) * cp.at(b, j);
        }
      }
      s = VarState{t.constant(h_blend), t.constant(c_blend)};
      CHECK(t.value(states[static_cast<size_t>(step_idx)].h) == t.value(s.h));
      CHECK(t.value(states[static_cast<size_t>(step_idx)].c) == t.value(s.c));
    }
  }
}

TEST_CASE("unroll rejects an empty sequence") {
  CellParams p = cell_of(CellKind::kRnn);
  Tape t;
  CellVars cv = register_cell(t, p, false);
  CHECK_THROWS_AS(unroll_vars(t, cv, {}), ContractError);
}

TEST_CASE("unroll rejects a mismatched input dim") {
  CellParams p = cell_of(CellKind::kRnn);
  Tape t;
  CellVars cv = register_cell(t, p, false);
  CHECK_THROWS_AS(unroll(t, cv, Tensor(Shape{kB, 2, kD + 1})), ShapeError);
}

TEST_CASE("loss gradients through a 20-step unroll match finite differences for every kind") {
  for (CellKind kind : all_cell_kinds()) {
    CAPTURE(to_string(kind));
    GradCheckReport rep = gradcheck_cell(kind, 2, 20, 4, 8, 71);
    CHECK(rep.max_rel_err < 1e-4);
  }
}
