// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "prnn/rng.hpp"
#include "prnn/tape.hpp"
#include "prnn/tensor.hpp"
#include "testutil.hpp"

using namespace prnn;

TEST_CASE("tensor shape and data agree") {
  Tensor t(Shape{2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{0, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{1, 1, 1, 1}), ShapeError);
}

TEST_CASE("matmul identity and hand-checked product") {
  Tape tape;
  Var eye = tape.constant(Tensor::identity(2));
  Var v = tape.constant(Tensor(Shape{2, 1}, {3.0, 4.0}));
  CHECK(tape.value(tape.matmul(eye, v)) == Tensor(Shape{2, 1}, {3.0, 4.0}));

  Var a = tape.constant(Tensor(Shape{2, 2}, {1.0, 2.0, 3.0, 4.0}));
  Var ones = tape.constant(Tensor(Shape{2, 1}, {1.0, 1.0}));
  CHECK(tape.value(tape.matmul(a, ones)) == Tensor(Shape{2, 1}, {3.0, 7.0}));
}

TEST_CASE("matmul rejects mismatched inner extents naming both shapes") {
  Tape tape;
  Var a = tape.constant(Tensor(Shape{2, 3}));
  Var b = tape.constant(Tensor(Shape{2, 2}));
  try {
    tape.matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences on random 3x4 * 4x2") {
  Rng rng(11);
  Tensor a_value = Tensor::uniform(Shape{3, 4}, rng, -1.0, 1.0);
  Tensor b_value = Tensor::uniform(Shape{4, 2}, rng, -1.0, 1.0);

  auto loss = [&] {
    Tape t;
    return t.value(t.sum(t.matmul(t.constant(a_value), t.constant(b_value)))).scalar();
  };

  Tape t;
  Var a = t.leaf(a_value);
  Var b = t.leaf(b_value);
  Gradient g = t.backward(t.sum(t.matmul(a, b)));

  CHECK(testutil::max_grad_rel_err(a_value, g.of(a), loss) < 1e-6);
  CHECK(testutil::max_grad_rel_err(b_value, g.of(b), loss) < 1e-6);
}

TEST_CASE("elementwise basics") {
  Tape tape;
  Var zero = tape.constant(Tensor{0.0});
  CHECK(tape.value(tape.sigmoid(zero)).scalar() == 0.5);
  CHECK(tape.value(tape.tanh(zero)).scalar() == 0.0);

  Var a = tape.constant(Tensor{1.0, 2.0});
  Var b = tape.constant(Tensor{3.0, 5.0});
  CHECK(tape.value(tape.add(a, b)) == Tensor{4.0, 7.0});
  CHECK(tape.value(tape.sub(a, b)) == Tensor{-2.0, -3.0});
  CHECK(tape.value(tape.mul(a, b)) == Tensor{3.0, 10.0});
}

TEST_CASE("bias add broadcasts a vector over matrix rows and nothing else") {
  Tape tape;
  Var m = tape.constant(Tensor(Shape{2, 2}, {1.0, 2.0, 3.0, 4.0}));
  Var bias = tape.constant(Tensor{10.0, 20.0});
  CHECK(tape.value(tape.add(m, bias)) == Tensor(Shape{2, 2}, {11.0, 22.0, 13.0, 24.0}));

  Var col = tape.constant(Tensor(Shape{2, 1}, {1.0, 1.0}));
  CHECK_THROWS_AS(tape.add(m, col), ShapeError);
  CHECK_THROWS_AS(tape.mul(m, bias), ShapeError);
  CHECK_THROWS_AS(tape.sub(m, bias), ShapeError);
}

TEST_CASE("sigmoid is stable at extreme inputs") {
  Tape tape;
  Var big = tape.constant(Tensor{750.0, -750.0});
  Tensor out = tape.value(tape.sigmoid(big));
  CHECK(out.at(0) == 1.0);
  CHECK(out.at(1) == 0.0);
  CHECK(out.all_finite());
}

TEST_CASE("tanh derivative matches central differences at 0.3") {
  std::vector<double> x{0.3};
  auto loss = [&] {
    Tape t;
    return t.value(t.tanh(t.constant(Tensor{x[0]}))).scalar();
  };
  Tape t;
  Var leaf = t.leaf(Tensor{x[0]});
  Gradient g = t.backward(t.tanh(leaf));
  const double fd = testutil::fd_entry(x, 0, loss);
  CHECK(testutil::rel_err(g.of(leaf).scalar(), fd) < 1e-6);
}

TEST_CASE("reductions") {
  Tape tape;
  CHECK(tape.value(tape.mean(tape.constant(Tensor{1.0, 2.0, 3.0}))).scalar() == 2.0);
  Var m = tape.constant(Tensor(Shape{2, 2}, {1.0, 2.0, 3.0, 4.0}));
  CHECK(tape.value(tape.sum(m, 0)) == Tensor{4.0, 6.0});
  CHECK(tape.value(tape.sum(m, 1)) == Tensor{3.0, 7.0});
  CHECK(tape.value(tape.mean(m, 0)) == Tensor{2.0, 3.0});
  CHECK_THROWS_AS(tape.sum(m, 2), ShapeError);
  CHECK_THROWS_AS(tape.mean(m, -1), ShapeError);
}

TEST_CASE("gradient of mean is 1/n everywhere") {
  Tape tape;
  Var p = tape.leaf(Tensor{1.0, 2.0, 3.0, 4.0, 5.0});
  Gradient g = tape.backward(tape.mean(p));
  for (int i = 0; i < 5; ++i) CHECK(g.of(p).at(i) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("backward of a leaf root is one") {
  Tape tape;
  Var p = tape.leaf(Tensor{2.5});
  Gradient g = tape.backward(p);
  CHECK(g.of(p).scalar() == 1.0);
}

TEST_CASE("backward of sum(p*p) is 2p") {
  Tape tape;
  Var p = tape.leaf(Tensor{1.0, 2.0});
  Gradient g = tape.backward(tape.sum(tape.mul(p, p)));
  CHECK(g.of(p) == Tensor{2.0, 4.0});
}

TEST_CASE("backward requires a scalar root") {
  Tape tape;
  Var p = tape.leaf(Tensor{1.0, 2.0});
  CHECK_THROWS_AS(tape.backward(p), ContractError);
}

TEST_CASE("unreached leaves get zero gradients") {
  Tape tape;
  Var used = tape.leaf(Tensor{3.0});
  Var unused = tape.leaf(Tensor{4.0, 5.0});
  Gradient g = tape.backward(tape.mul(used, used));
  CHECK(g.of(used).scalar() == 6.0);
  CHECK(g.of(unused) == Tensor{0.0, 0.0});
}

TEST_CASE("gradients agree with finite differences across op mix, 10 seeded trials") {
  for (uint64_t trial = 0; trial < 10; ++trial) {
    Rng rng(100 + trial);
    Tensor w_value = Tensor::uniform(Shape{3, 4}, rng, -1.0, 1.0);
    Tensor b_value = Tensor::uniform(Shape{4}, rng, -0.5, 0.5);
    Tensor x_value = Tensor::uniform(Shape{2, 3}, rng, -1.0, 1.0);

    auto build = [&](Tape& t, Var w, Var b) {
      Var x = t.constant(x_value);
      Var pre = t.add(t.matmul(x, w), b);
      Var act = t.mul(t.tanh(pre), t.sigmoid(pre));
      return t.mean(t.mul(act, act));
    };
    auto loss = [&] {
      Tape t;
      return t.value(build(t, t.constant(w_value), t.constant(b_value))).scalar();
    };

    Tape t;
    Var w = t.leaf(w_value);
    Var b = t.leaf(b_value);
    Gradient g = t.backward(build(t, w, b));
    CHECK(testutil::max_grad_rel_err(w_value, g.of(w), loss) < 1e-4);
    CHECK(testutil::max_grad_rel_err(b_value, g.of(b), loss) < 1e-4);
  }
}

TEST_CASE("backward is linear in the root") {
  Rng rng(42);
  Tensor p_value = Tensor::uniform(Shape{6}, rng, -1.0, 1.0);
  const double a = 1.7, b = -0.4;

  Tape t;
  Var p = t.leaf(p_value);
  Var l1 = t.sum(t.mul(p, t.tanh(p)));
  Var l2 = t.mean(t.sigmoid(p));
  Var combined = t.add(t.scale(l1, a), t.scale(l2, b));

  Gradient g1 = t.backward(l1);
  Gradient g2 = t.backward(l2);
  Gradient gc = t.backward(combined);
  for (int i = 0; i < 6; ++i) {
    const double expect = a * g1.of(p).at(i) + b * g2.of(p).at(i);
    CHECK(std::abs(gc.of(p).at(i) - expect) < 1e-10);
  }
}

TEST_CASE("replaying the same tape twice gives bitwise-identical gradients") {
  Rng rng(5);
  Tape t;
  Var w = t.leaf(Tensor::uniform(Shape{4, 4}, rng, -1.0, 1.0));
  Var x = t.constant(Tensor::uniform(Shape{2, 4}, rng, -1.0, 1.0));
  Var loss = t.mean(t.tanh(t.matmul(x, w)));
  Gradient first = t.backward(loss);
  Gradient second = t.backward(loss);
  CHECK(first.of(w) == second.of(w));
}

TEST_CASE("cross_entropy forward and gradient") {
  // uniform logits over K classes -> CE = ln K per masked row
  Tape tape;
  const int classes = 7;
  Var logits = tape.constant(Tensor(Shape{2, classes}));
  Var ce = tape.cross_entropy(logits, {3, 5}, {1.0, 1.0});
  CHECK(tape.value(ce).scalar() == doctest::Approx(2.0 * std::log(classes)).epsilon(1e-12));

  Rng rng(9);
  Tensor l_value = Tensor::uniform(Shape{3, 5}, rng, -2.0, 2.0);
  const std::vector<int> targets{0, 4, 2};
  const std::vector<double> mask{1.0, 0.0, 1.0};
  auto loss = [&] {
    Tape t;
    return t.value(t.cross_entropy(t.constant(l_value), targets, mask)).scalar();
  };
  Tape t;
  Var leaf = t.leaf(l_value);
  Gradient g = t.backward(t.cross_entropy(leaf, targets, mask));
  CHECK(testutil::max_grad_rel_err(l_value, g.of(leaf), loss) < 1e-6);
}

TEST_CASE("values stay finite through a representative op chain") {
  Rng rng(3);
  Tape t;
  Var w = t.leaf(Tensor::uniform(Shape{8, 8}, rng, -2.0, 2.0));
  Var x = t.constant(Tensor::uniform(Shape{4, 8}, rng, -5.0, 5.0));
  Var y = t.sigmoid(t.matmul(t.tanh(t.matmul(x, w)), w));
  CHECK(t.value(y).all_finite());
}
