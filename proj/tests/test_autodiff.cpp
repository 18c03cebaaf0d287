#include <cmath>
#include <random>

#include "doctest.h"
#include "ghn/autodiff.hpp"
#include "gradcheck.hpp"

using namespace ghn;
using ghn::testing::grad_check;
using ghn::testing::project;
using ghn::testing::random_tensor;

TEST_CASE("tensor rejects zero extents and mismatched data") {
  CHECK_THROWS_AS(Tensor3(0, 1, 1), ShapeError);
  CHECK_THROWS_AS(Tensor3(Dims{1, 2, 2}, std::vector<double>(3)), ShapeError);
  Tensor3 t(2, 3, 4);
  CHECK(t.size() == 24);
}

TEST_CASE("to_rows and from_rows are inverse layouts") {
  std::mt19937_64 rng(3);
  const Tensor3 x = random_tensor({2, 1, 3}, rng);
  const Tensor3 rows = to_rows(x);
  CHECK(rows.dims() == Dims{6, 1, 1});
  CHECK(rows(1 * 3 + 2, 0, 0) == x(1, 0, 2));
  // A (I*C, 1, H) array with H = 1 maps back exactly.
  CHECK(from_rows(rows, 2) == x);
}

TEST_CASE("sigmoid of zero is one half") {
  Tape tape;
  const Var y = ops::sigmoid(tape.constant(Tensor3(2, 3, 4, 0.0)));
  for (double v : y.value().values()) CHECK(v == 0.5);
}

TEST_CASE("sigmoid stays finite for large inputs") {
  Tape tape;
  Tensor3 x(1, 1, 2);
  x[0] = 800.0;
  x[1] = -800.0;
  const Var y = ops::sigmoid(tape.constant(x));
  CHECK(y.value()[0] == 1.0);
  CHECK(y.value()[1] == 0.0);
  CHECK(y.value().all_finite());
}

TEST_CASE("matmul over the feature axis") {
  Tape tape;
  const Var x = tape.constant(Tensor3(Dims{1, 1, 2}, {1.0, 2.0}));
  const Var w = tape.constant(Tensor3(Dims{1, 2, 1}, {3.0, 4.0}));
  const Var y = ops::matmul(x, w);
  CHECK(y.dims() == Dims{1, 1, 1});
  CHECK(y.value()[0] == 11.0);
}

TEST_CASE("shape mismatch names the primitive and both shapes") {
  Tape tape;
  const Var a = tape.constant(Tensor3(2, 3, 4));
  const Var b = tape.constant(Tensor3(2, 3, 5));
  try {
    ops::add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(e.op() == "add");
    const std::string msg = e.what();
    CHECK(msg.find("(2, 3, 4)") != std::string::npos);
    CHECK(msg.find("(2, 3, 5)") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::matmul(a, tape.constant(Tensor3(1, 3, 2))), ShapeError);
  CHECK_THROWS_AS(ops::slice_time(a, 2, 2), ShapeError);
  CHECK_THROWS_AS(ops::mean_instances(a, 0), ShapeError);
}

TEST_CASE("mean over a single instance is the identity") {
  std::mt19937_64 rng(5);
  Tape tape;
  const Tensor3 x = random_tensor({4, 3, 2}, rng);
  const Var y = ops::mean_instances(tape.constant(x), 1);
  CHECK(y.value() == x);
}

TEST_CASE("gradient of a sum is all ones") {
  std::mt19937_64 rng(7);
  Tape tape;
  const Var p = tape.parameter(random_tensor({2, 3, 4}, rng));
  tape.backward(ops::sum(p));
  const Tensor3 grad = tape.grad(p);
  for (double g : grad.values()) CHECK(g == 1.0);
}

TEST_CASE("sigmoid(w x) at w = 0, x = 1 has gradient 0.25") {
  Tape tape;
  const Var w = tape.parameter(Tensor3(Dims{1, 1, 1}, {0.0}));
  const Var x = tape.constant(Tensor3(Dims{1, 1, 1}, {1.0}));
  tape.backward(ops::sigmoid(ops::matmul(x, w)));
  CHECK(tape.grad(w)[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("a node consumed twice accumulates both contributions") {
  Tape tape;
  const Var x = tape.parameter(Tensor3(Dims{1, 1, 3}, {1.0, -2.0, 0.5}));
  const Var y = ops::add(x, x);
  tape.backward(ops::sum(y));
  const Tensor3 grad = tape.grad(x);
  for (double g : grad.values()) CHECK(g == 2.0);
}

TEST_CASE("unreachable parameters get zero gradient") {
  Tape tape;
  const Var used = tape.parameter(Tensor3(1, 1, 2, 1.0));
  const Var unused = tape.parameter(Tensor3(1, 2, 2, 1.0));
  tape.backward(ops::sum(used));
  const Tensor3 g = tape.grad(unused);
  CHECK(g.dims() == Dims{1, 2, 2});
  for (double v : g.values()) CHECK(v == 0.0);
}

TEST_CASE("backward requires a scalar loss") {
  Tape tape;
  const Var p = tape.parameter(Tensor3(1, 1, 2, 1.0));
  CHECK_THROWS_AS(tape.backward(p), ShapeError);
}

TEST_CASE("backward visits each gradient-carrying node once") {
  Tape tape;
  const Var x = tape.parameter(Tensor3(1, 2, 2, 0.3));
  const Var c = tape.constant(Tensor3(1, 2, 2, 2.0));
  const Var y = ops::tanh(ops::mul(x, c));  // 2 recorded nodes
  const Var loss = ops::sum(ops::add(y, y));  // 2 more
  tape.backward(loss);
  CHECK(tape.visited() == 4);
}

TEST_CASE("forward is deterministic") {
  auto run = [] {
    std::mt19937_64 rng(11);
    Tape tape;
    const Var x = tape.constant(random_tensor({3, 4, 2}, rng));
    const Var w = tape.constant(random_tensor({1, 2, 5}, rng));
    return ops::tanh(ops::matmul(x, w)).value();
  };
  CHECK(run() == run());
}

TEST_CASE("every primitive matches central finite differences") {
  std::mt19937_64 rng(2024);
  const std::vector<std::vector<std::size_t>> nbrs{{1}, {0, 2}, {1}};
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng() % 3, t = 1 + rng() % 3, c = 1 + rng() % 3, g = 1 + rng() % 3;
    const Tensor3 a = random_tensor({n, t, c}, rng);
    const Tensor3 b = random_tensor({n, t, c}, rng);
    const Tensor3 w = random_tensor({1, c, g}, rng);
    const Tensor3 bias = random_tensor({1, 1, c}, rng);
    const Tensor3 e = random_tensor({n, t, g}, rng);
    const Tensor3 s = random_tensor({3 * n, t, c}, rng);
    const Tensor3 one = random_tensor({n, 1, c}, rng);

    auto check = [&](const char* name, const testing::LossFn& fn, std::vector<Tensor3> in) {
      const auto r = grad_check(fn, std::move(in));
      INFO(name << " trial " << trial);
      CHECK(r.max_rel_error < 1e-4);
    };
    check("matmul", [](Tape& tp, auto& v) { return project(tp, ops::matmul(v[0], v[1])); }, {a, w});
    check("add", [](Tape& tp, auto& v) { return project(tp, ops::add(v[0], v[1])); }, {a, b});
    check("sub", [](Tape& tp, auto& v) { return project(tp, ops::sub(v[0], v[1])); }, {a, b});
    check("mul", [](Tape& tp, auto& v) { return project(tp, ops::mul(v[0], v[1])); }, {a, b});
    check("scale", [](Tape& tp, auto& v) { return project(tp, ops::scale(v[0], -1.7)); }, {a});
    check("add_bias", [](Tape& tp, auto& v) { return project(tp, ops::add_bias(v[0], v[1])); }, {a, bias});
    check("sigmoid", [](Tape& tp, auto& v) { return project(tp, ops::sigmoid(v[0])); }, {a});
    check("tanh", [](Tape& tp, auto& v) { return project(tp, ops::tanh(v[0])); }, {a});
    check("concat_features", [](Tape& tp, auto& v) {
      const Var parts[] = {v[0], v[1]};
      return project(tp, ops::concat_features(parts));
    }, {a, e});
    check("concat_time", [](Tape& tp, auto& v) {
      const Var parts[] = {v[0], v[1], v[0]};
      return project(tp, ops::concat_time(parts));
    }, {a, b});
    check("slice_time", [t](Tape& tp, auto& v) { return project(tp, ops::slice_time(v[0], t - 1, 1)); }, {a});
    check("mean_instances", [](Tape& tp, auto& v) { return project(tp, ops::mean_instances(v[0], 3)); }, {s});
    check("broadcast_instances", [](Tape& tp, auto& v) { return project(tp, ops::broadcast_instances(v[0], 2)); }, {a});
    check("broadcast_time", [](Tape& tp, auto& v) { return project(tp, ops::broadcast_time(v[0], 4)); }, {one});
    check("neighbor_sum", [&nbrs](Tape& tp, auto& v) { return project(tp, ops::neighbor_sum(v[0], nbrs)); }, {s});
    check("mean", [](Tape& tp, auto& v) { return ops::mean(ops::mul(v[0], v[0])); }, {a});
  }
}

TEST_CASE("random three-layer composition matches finite differences") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor3 x = random_tensor({2, 3, 3}, rng);
    const Tensor3 w1 = random_tensor({1, 3, 4}, rng);
    const Tensor3 w2 = random_tensor({1, 4, 4}, rng);
    const Tensor3 w3 = random_tensor({1, 4, 2}, rng);
    const auto r = grad_check(
        [](Tape& tp, auto& v) {
          const Var h1 = ops::tanh(ops::matmul(v[0], v[1]));
          const Var h2 = ops::sigmoid(ops::matmul(h1, v[2]));
          return project(tp, ops::matmul(ops::mul(h2, h1), v[3]));
        },
        {x, w1, w2, w3});
    CHECK(r.max_rel_error < 1e-4);
  }
}
