#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "ghn/layers.hpp"
#include "gradcheck.hpp"

using namespace ghn;
using ghn::testing::grad_check;
using ghn::testing::project;
using ghn::testing::random_tensor;

namespace {

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Tensor3 permute_instances(const Tensor3& rows, std::size_t instances, const std::vector<std::size_t>& perm) {
  const std::size_t sensors = rows.dims().n / instances;
  const std::size_t row = rows.dims().t * rows.dims().c;
  Tensor3 out(rows.dims());
  for (std::size_t i = 0; i < instances; ++i)
    for (std::size_t c = 0; c < sensors; ++c)
      for (std::size_t k = 0; k < row; ++k) out[(i * sensors + c) * row + k] = rows[(perm[i] * sensors + c) * row + k];
  return out;
}

Tensor3 permute_vertices(const Tensor3& rows, std::size_t sensors, const std::vector<std::size_t>& perm) {
  const std::size_t instances = rows.dims().n / sensors;
  const std::size_t row = rows.dims().t * rows.dims().c;
  Tensor3 out(rows.dims());
  for (std::size_t i = 0; i < instances; ++i)
    for (std::size_t c = 0; c < sensors; ++c)
      for (std::size_t k = 0; k < row; ++k) out[(i * sensors + c) * row + k] = rows[(i * sensors + perm[c]) * row + k];
  return out;
}

// Independent plain-array matrix product for the linear surrogate oracles.
std::vector<double> vecmat(const std::vector<double>& v, const Tensor3& w) {
  std::vector<double> out(w.dims().c, 0.0);
  for (std::size_t k = 0; k < v.size(); ++k)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += v[k] * w(0, k, j);
  return out;
}

double max_abs(const Tensor3& a, const Tensor3& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("GRU parameter count formula") {
  Rng rng(1);
  ParameterStore store;
  make_gru(store, "g", 1, 2, rng);
  CHECK(store.scalar_count() == 24);
  CHECK(GruParams::count(1, 2) == 24);
  CHECK(GruParams::count(7, 64) == store.scalar_count() + (GruParams::count(7, 64) - 24));
}

TEST_CASE("GRU with all-zero weights outputs zeros") {
  Rng rng(2);
  ParameterStore store;
  const GruParams gru = make_gru(store, "g", 3, 4, rng);
  for (auto& v : store.values()) v.fill(0.0);
  std::mt19937_64 data(3);
  Tape tape;
  Binding b(tape, store);
  const Var y = gru_forward(b, gru, tape.constant(random_tensor({2, 5, 3}, data, -5, 5)));
  CHECK(y.dims() == Dims{2, 5, 4});
  for (double v : y.value().values()) CHECK(v == 0.0);
}

TEST_CASE("GRU single step matches the gate equations") {
  Rng rng(4);
  ParameterStore store;
  const GruParams gru = make_gru(store, "g", 1, 1, rng);
  const double wz = 0.5, uz = -0.3, bz = 0.1, wr = -0.7, ur = 0.2, br = 0.05, wh = 1.2, uh = 0.9, bh = -0.4;
  store[gru.w_z][0] = wz;
  store[gru.u_z][0] = uz;
  store[gru.b_z][0] = bz;
  store[gru.w_r][0] = wr;
  store[gru.u_r][0] = ur;
  store[gru.b_r][0] = br;
  store[gru.w_h][0] = wh;
  store[gru.u_h][0] = uh;
  store[gru.b_h][0] = bh;
  const double x = 2.0;
  // h0 = 0, so the recurrent terms vanish on the first step.
  const double z = sig(wz * x + bz);
  const double cand = std::tanh(wh * x + bh);
  const double h1 = z * cand;
  // Second step, written out by hand.
  const double x2 = -1.0;
  const double z2 = sig(wz * x2 + uz * h1 + bz);
  const double r2 = sig(wr * x2 + ur * h1 + br);
  const double c2 = std::tanh(wh * x2 + uh * (r2 * h1) + bh);
  const double h2 = (1.0 - z2) * h1 + z2 * c2;

  Tape tape;
  Binding b(tape, store);
  const Var y1 = gru_forward(b, gru, tape.constant(Tensor3(Dims{1, 1, 1}, {x})));
  CHECK(y1.value()[0] == doctest::Approx(h1).epsilon(1e-14));
  const Var y2 = gru_forward(b, gru, tape.constant(Tensor3(Dims{1, 2, 1}, {x, x2})));
  CHECK(y2.value()[0] == doctest::Approx(h1).epsilon(1e-14));
  CHECK(y2.value()[1] == doctest::Approx(h2).epsilon(1e-14));
}

TEST_CASE("GRU output shape at the paper width") {
  Rng rng(5);
  ParameterStore store;
  const GruParams gru = make_gru(store, "g", 1, 64, rng);
  Tape tape;
  Binding b(tape, store);
  const Var y = gru_forward(b, gru, tape.constant(Tensor3(5, 50, 1, 0.1)));
  CHECK(y.dims() == Dims{5, 50, 64});
  CHECK(y.value().all_finite());
}

TEST_CASE("GRU rejects an input width mismatch") {
  Rng rng(6);
  ParameterStore store;
  const GruParams gru = make_gru(store, "g", 2, 3, rng);
  Tape tape;
  Binding b(tape, store);
  CHECK_THROWS_AS(gru_forward(b, gru, tape.constant(Tensor3(1, 4, 3))), ShapeError);
}

TEST_CASE("deep-set block") {
  Rng rng(7);
  ParameterStore store;
  const DsBlockParams ds = make_ds_block(store, "ds", 1, 4, 2, 1, rng);
  std::mt19937_64 data(8);

  SUBCASE("a single instance aggregates to its own inner output") {
    Tape tape;
    Binding b(tape, store);
    const Var x = tape.constant(random_tensor({3, 6, 1}, data));
    const DsOutput out = ds_block(b, ds, x, 1);
    const Var direct = gru_stack_forward(b, ds.outer, out.per_instance);
    CHECK(out.aggregated.value() == direct.value());
  }

  SUBCASE("instance permutation leaves the aggregate bitwise unchanged") {
    const std::size_t inst = 5, sensors = 3;
    const Tensor3 x = random_tensor({inst * sensors, 7, 1}, data);
    std::vector<std::size_t> perm(inst);
    std::iota(perm.begin(), perm.end(), 0);
    for (int trial = 0; trial < 5; ++trial) {
      std::shuffle(perm.begin(), perm.end(), data);
      Tape tape;
      Binding b(tape, store);
      const DsOutput base = ds_block(b, ds, tape.constant(x), inst);
      const DsOutput perm_out = ds_block(b, ds, tape.constant(permute_instances(x, inst, perm)), inst);
      CHECK(perm_out.aggregated.value() == base.aggregated.value());
      // Per-instance branch is equivariant.
      CHECK(perm_out.per_instance.value() == permute_instances(base.per_instance.value(), inst, perm));
    }
  }

  SUBCASE("empty support set is an error") {
    Tape tape;
    Binding b(tape, store);
    CHECK_THROWS_AS(ds_block(b, ds, tape.constant(Tensor3(2, 3, 1)), 0), ShapeError);
  }
}

TEST_CASE("deep-set aggregation with linear surrogates matches direct evaluation") {
  std::mt19937_64 data(9);
  const Tensor3 a = random_tensor({1, 2, 3}, data);
  const Tensor3 g = random_tensor({1, 3, 3}, data);
  const Tensor3 x = random_tensor({2 * 2, 1, 2}, data);  // 2 instances, 2 sensors
  Tape tape;
  const Var av = tape.constant(a), gv = tape.constant(g);
  const DsOutput out = ds_aggregate(
      tape.constant(x), 2, [&](Var v) { return ops::matmul(v, av); }, [&](Var v) { return ops::matmul(v, gv); });
  for (std::size_t c = 0; c < 2; ++c) {
    const auto f0 = vecmat({x(c, 0, 0), x(c, 0, 1)}, a);
    const auto f1 = vecmat({x(2 + c, 0, 0), x(2 + c, 0, 1)}, a);
    std::vector<double> avg(3);
    for (std::size_t k = 0; k < 3; ++k) avg[k] = 0.5 * (f0[k] + f1[k]);
    const auto w = vecmat(avg, g);
    for (std::size_t k = 0; k < 3; ++k) CHECK(out.aggregated.value()(c, 0, k) == doctest::Approx(w[k]).epsilon(1e-14));
  }
}

TEST_CASE("graph-convolution block") {
  Rng rng(10);
  ParameterStore store;
  const GcnBlockParams gcn = make_gcn_block(store, "gcn", 2, 3, 2, rng);
  std::mt19937_64 data(11);

  SUBCASE("outer width is 2K on stacked layers") {
    CHECK(gcn.layers[0].outer.input == 2 + 3);
    CHECK(gcn.layers[1].outer.input == 2 * 3);
  }

  SUBCASE("edgeless graph passes zero messages") {
    const std::size_t sensors = 4;
    const Tensor3 x = random_tensor({2 * sensors, 5, 2}, data);
    Tape tape;
    Binding b(tape, store);
    const auto& layer = gcn.layers[0];
    const Var out = gcn_layer(
        tape.constant(x), MotionGraph::edgeless(sensors),
        [&](Var v) { return gru_forward(b, layer.inner, v); }, [&](Var v) { return gru_forward(b, layer.outer, v); });
    const Var xv = tape.constant(x);
    const Var parts[] = {xv, tape.constant(Tensor3(2 * sensors, 5, 3))};
    const Var expected = gru_forward(b, layer.outer, ops::concat_features(parts));
    CHECK(out.value() == expected.value());
  }

  SUBCASE("single vertex equals the edgeless case with C = 1") {
    const Tensor3 x = random_tensor({3, 4, 2}, data);
    Tape tape;
    Binding b(tape, store);
    const Var one = gcn_block(b, gcn, tape.constant(x), MotionGraph::edgeless(1));
    const Var other = gcn_block(b, gcn, tape.constant(x), MotionGraph::from_edges(1, {}));
    CHECK(one.value() == other.value());
    CHECK(one.dims() == Dims{3, 4, 3});
  }

  SUBCASE("vertex relabeling is exactly equivariant") {
    const std::size_t sensors = 6;
    const std::vector<std::pair<std::size_t, std::size_t>> edges{{0, 1}, {1, 2}, {1, 3}, {3, 4}, {4, 5}, {2, 5}};
    const MotionGraph graph = MotionGraph::from_edges(sensors, edges);
    const Tensor3 x = random_tensor({2 * sensors, 5, 2}, data);
    std::vector<std::size_t> perm(sensors);
    std::iota(perm.begin(), perm.end(), 0);
    for (int trial = 0; trial < 5; ++trial) {
      std::shuffle(perm.begin(), perm.end(), data);
      Tape tape;
      Binding b(tape, store);
      const Var base = gcn_block(b, gcn, tape.constant(x), graph);
      const Var moved = gcn_block(b, gcn, tape.constant(permute_vertices(x, sensors, perm)), graph.permuted(perm));
      CHECK(moved.value() == permute_vertices(base.value(), sensors, perm));
    }
  }

  SUBCASE("asymmetric adjacency and row mismatch are errors") {
    MotionGraph bad({0, 1}, {"a", "b"}, {0, 1, 0, 0});
    Tape tape;
    Binding b(tape, store);
    CHECK_THROWS_AS(gcn_block(b, gcn, tape.constant(Tensor3(2, 3, 2)), bad), GraphError);
    CHECK_THROWS_AS(gcn_block(b, gcn, tape.constant(Tensor3(5, 3, 2)), MotionGraph::path(3)), ShapeError);
  }
}

TEST_CASE("graph layer on a path with linear surrogates matches direct evaluation") {
  // a - b - c, f(v) = v A, g([x, m]) = [x, m] G.
  std::mt19937_64 data(12);
  const Tensor3 a = random_tensor({1, 2, 2}, data);
  const Tensor3 g = random_tensor({1, 4, 2}, data);
  const Tensor3 x = random_tensor({3, 1, 2}, data);
  Tape tape;
  const Var av = tape.constant(a), gv = tape.constant(g);
  const Var out = gcn_layer(
      tape.constant(x), MotionGraph::path(3), [&](Var v) { return ops::matmul(v, av); },
      [&](Var v) { return ops::matmul(v, gv); });
  auto row = [&](std::size_t c) { return std::vector<double>{x(c, 0, 0), x(c, 0, 1)}; };
  auto add = [](std::vector<double> p, const std::vector<double>& q) {
    for (std::size_t k = 0; k < p.size(); ++k) p[k] += q[k];
    return p;
  };
  const std::vector<std::vector<double>> messages{vecmat(row(1), a), add(vecmat(row(0), a), vecmat(row(2), a)),
                                                  vecmat(row(1), a)};
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> cat = row(c);
    cat.insert(cat.end(), messages[c].begin(), messages[c].end());
    const auto u = vecmat(cat, g);
    for (std::size_t k = 0; k < 2; ++k) CHECK(out.value()(c, 0, k) == doctest::Approx(u[k]).epsilon(1e-14));
  }
}

TEST_CASE("GRU block") {
  Rng rng(13);
  ParameterStore store;
  const GruBlockParams one = make_gru_block(store, "one", 1, 4, 1, 1, rng);
  const GruBlockParams two = make_gru_block(store, "two", 1, 4, 2, 1, rng);
  std::mt19937_64 data(14);
  const std::size_t sensors = 3;
  const Tensor3 x = random_tensor({2 * sensors, 50, 1}, data);
  Tape tape;
  Binding b(tape, store);
  const Var xv = tape.constant(x);

  SUBCASE("depth one reduces to a single GRU plus readout") {
    const Var expected = linear(b, one.readout, gru_forward(b, one.stack.layers[0], xv));
    CHECK(gru_block(b, one, xv).value() == expected.value());
  }
  SUBCASE("query output has one feature per sensor and step") {
    const Tensor3 y = gru_block(b, two, xv).value();
    CHECK(y.dims() == Dims{2 * sensors, 50, 1});
    const Tensor3 by_sensor = from_rows(ops::slice_time(gru_block(b, two, xv), 49, 1).value(), 2);
    CHECK(by_sensor.dims() == Dims{2, 1, sensors});
  }
  SUBCASE("two-layer stack equals manual composition") {
    const Var manual =
        linear(b, two.readout, gru_forward(b, two.stack.layers[1], gru_forward(b, two.stack.layers[0], xv)));
    CHECK(gru_block(b, two, xv).value() == manual.value());
  }
}

namespace {

// Checks gradients of every parameter and the input of a layer built by
// `build` on a store, with the loss a fixed projection of `forward`.
template <typename Forward>
double layer_grad_error(const ParameterStore& store, const Tensor3& x, Forward forward) {
  auto values = store.values();
  values.push_back(x);
  const auto r = grad_check(
      [&](Tape& tp, const std::vector<Var>& v) {
        Binding b(tp, std::vector<Var>(v.begin(), v.end() - 1));
        return project(tp, forward(b, v.back()));
      },
      values);
  return r.max_rel_error;
}

}  // namespace

TEST_CASE("layer gradients match finite differences") {
  std::mt19937_64 data(15);
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(100 + trial);
    const std::size_t in = 1 + data() % 2, hidden = 1 + data() % 3, steps = 1 + data() % 3;
    const std::size_t inst = 1 + data() % 3;
    INFO("trial " << trial);
    {
      ParameterStore store;
      const GruParams gru = make_gru(store, "g", in, hidden, rng);
      const Tensor3 x = random_tensor({2, steps, in}, data);
      CHECK(layer_grad_error(store, x, [&](const Binding& b, Var v) { return gru_forward(b, gru, v); }) < 1e-4);
    }
    {
      ParameterStore store;
      const DsBlockParams ds = make_ds_block(store, "ds", in, hidden, 2, 1, rng);
      const Tensor3 x = random_tensor({inst * 2, steps, in}, data);
      CHECK(layer_grad_error(store, x, [&](const Binding& b, Var v) {
              const DsOutput o = ds_block(b, ds, v, inst);
              return ops::add(ops::mean_instances(o.per_instance, inst), o.aggregated);
            }) < 1e-4);
    }
    {
      ParameterStore store;
      const GcnBlockParams gcn = make_gcn_block(store, "gcn", in, hidden, 2, rng);
      const Tensor3 x = random_tensor({inst * 3, steps, in}, data);
      const MotionGraph graph = MotionGraph::path(3);
      CHECK(layer_grad_error(store, x, [&](const Binding& b, Var v) { return gcn_block(b, gcn, v, graph); }) < 1e-4);
    }
    {
      ParameterStore store;
      const GruBlockParams block = make_gru_block(store, "gb", in, hidden, 2, 3, rng);
      const Tensor3 x = random_tensor({2, steps, in}, data);
      CHECK(layer_grad_error(store, x, [&](const Binding& b, Var v) { return gru_block_last(b, block, v); }) < 1e-4);
    }
    {
      ParameterStore store;
      const LinearParams lin = make_linear(store, "lin", in, hidden, rng);
      const Tensor3 x = random_tensor({2, steps, in}, data);
      CHECK(layer_grad_error(store, x, [&](const Binding& b, Var v) { return linear(b, lin, v); }) < 1e-4);
    }
  }
}

TEST_CASE("block parameter counts do not depend on sensors or instances") {
  Rng rng(16);
  ParameterStore store;
  const GcnBlockParams gcn = make_gcn_block(store, "gcn", 1, 4, 2, rng);
  const std::size_t count = store.scalar_count();
  std::mt19937_64 data(17);
  for (std::size_t sensors : {2u, 5u}) {
    Tape tape;
    Binding b(tape, store);
    const Var out = gcn_block(b, gcn, tape.constant(random_tensor({3 * sensors, 4, 1}, data)), MotionGraph::path(sensors));
    CHECK(out.dims() == Dims{3 * sensors, 4, 4});
  }
  CHECK(store.scalar_count() == count);
  CHECK(count == GruParams::count(1, 4) + GruParams::count(5, 4) + GruParams::count(4, 4) + GruParams::count(8, 4));
}

TEST_CASE("fused GRU equals the step-by-step recurrence") {
  std::mt19937_64 data(18);
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(200 + trial);
    const std::size_t in = 1 + data() % 5, hidden = 1 + data() % 9, steps = 1 + data() % 6, rows = 1 + data() % 7;
    ParameterStore store;
    const GruParams gru = make_gru(store, "g", in, hidden, rng);
    const Tensor3 x = random_tensor({rows, steps, in}, data, -3.0, 3.0);
    Tape a, b;
    const Binding ba(a, store), bb(b, store);
    const Var xa = a.parameter(x), xb = b.parameter(x);
    const Var fused = gru_forward(ba, gru, xa);
    const Var step = gru_forward_stepwise(bb, gru, xb);
    CHECK(fused.value() == step.value());
    a.backward(project(a, fused));
    b.backward(project(b, step));
    CHECK(max_abs(a.grad(xa), b.grad(xb)) < 1e-12);
    const auto ga = ba.gradients(), gb = bb.gradients();
    for (std::size_t k = 0; k < ga.size(); ++k) CHECK(max_abs(ga[k], gb[k]) < 1e-12);
  }
}
