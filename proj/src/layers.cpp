#include "ghn/layers.hpp"

#include <cmath>

namespace ghn {

GruParams make_gru(ParameterStore& store, const std::string& name, std::size_t input,
                   std::size_t hidden, Rng& rng) {
  if (input == 0 || hidden == 0) throw ShapeError("make_gru", "input and hidden sizes must be >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(input + hidden));
  GruParams g;
  g.input = input;
  g.hidden = hidden;
  auto mat = [&](const char* tag, std::size_t rows) {
    return store.add_uniform(name + "." + tag, Dims{1, rows, hidden}, bound, rng);
  };
  auto vec = [&](const char* tag) { return store.add_uniform(name + "." + tag, Dims{1, 1, hidden}, bound, rng); };
  g.w_z = mat("w_z", input);
  g.u_z = mat("u_z", hidden);
  g.b_z = vec("b_z");
  g.w_r = mat("w_r", input);
  g.u_r = mat("u_r", hidden);
  g.b_r = vec("b_r");
  g.w_h = mat("w_h", input);
  g.u_h = mat("u_h", hidden);
  g.b_h = vec("b_h");
  return g;
}

Var gru_forward(const Binding& params, const GruParams& gru, Var x) {
  if (x.dims().c != gru.input) {
    throw ShapeError("gru_forward", "input has " + std::to_string(x.dims().c) + " features, cell expects " +
                                        std::to_string(gru.input));
  }
  const ops::GruWeights w{params[gru.w_z], params[gru.u_z], params[gru.b_z], params[gru.w_r], params[gru.u_r],
                          params[gru.b_r], params[gru.w_h], params[gru.u_h], params[gru.b_h]};
  return ops::gru_sequence(x, w);
}

Var gru_forward_stepwise(const Binding& params, const GruParams& gru, Var x) {
  const Dims d = x.dims();
  if (d.c != gru.input) {
    throw ShapeError("gru_forward_stepwise", "input has " + std::to_string(d.c) + " features, cell expects " +
                                        std::to_string(gru.input));
  }
  Tape& tape = params.tape();
  // Input projections for all time steps at once.
  const Var xz = ops::add_bias(ops::matmul(x, params[gru.w_z]), params[gru.b_z]);
  const Var xr = ops::add_bias(ops::matmul(x, params[gru.w_r]), params[gru.b_r]);
  const Var xh = ops::add_bias(ops::matmul(x, params[gru.w_h]), params[gru.b_h]);
  const Var u_z = params[gru.u_z];
  const Var u_r = params[gru.u_r];
  const Var u_h = params[gru.u_h];

  Var h = tape.constant(Tensor3(d.n, 1, gru.hidden));
  std::vector<Var> states;
  states.reserve(d.t);
  for (std::size_t t = 0; t < d.t; ++t) {
    const Var z = ops::sigmoid(ops::add(ops::slice_time(xz, t, 1), ops::matmul(h, u_z)));
    const Var r = ops::sigmoid(ops::add(ops::slice_time(xr, t, 1), ops::matmul(h, u_r)));
    const Var cand = ops::tanh(ops::add(ops::slice_time(xh, t, 1), ops::matmul(ops::mul(r, h), u_h)));
    h = ops::add(h, ops::mul(z, ops::sub(cand, h)));
    states.push_back(h);
  }
  return states.size() == 1 ? states.front() : ops::concat_time(states);
}

GruStack make_gru_stack(ParameterStore& store, const std::string& name, std::size_t input,
                        std::size_t hidden, std::size_t depth, Rng& rng) {
  if (depth == 0) throw ShapeError("make_gru_stack", "depth must be >= 1");
  GruStack s;
  for (std::size_t k = 0; k < depth; ++k) {
    s.layers.push_back(make_gru(store, name + ".gru" + std::to_string(k), k == 0 ? input : hidden, hidden, rng));
  }
  return s;
}

Var gru_stack_forward(const Binding& params, const GruStack& stack, Var x) {
  for (const auto& layer : stack.layers) x = gru_forward(params, layer, x);
  return x;
}

LinearParams make_linear(ParameterStore& store, const std::string& name, std::size_t input,
                         std::size_t output, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(input));
  LinearParams lin;
  lin.input = input;
  lin.output = output;
  lin.w = store.add_uniform(name + ".w", Dims{1, input, output}, bound, rng);
  lin.b = store.add_uniform(name + ".b", Dims{1, 1, output}, bound, rng);
  return lin;
}

Var linear(const Binding& params, const LinearParams& lin, Var x) {
  return ops::add_bias(ops::matmul(x, params[lin.w]), params[lin.b]);
}

DsBlockParams make_ds_block(ParameterStore& store, const std::string& name, std::size_t input,
                            std::size_t hidden, std::size_t inner_depth, std::size_t outer_depth,
                            Rng& rng) {
  DsBlockParams b;
  b.inner = make_gru_stack(store, name + ".inner", input, hidden, inner_depth, rng);
  b.outer = make_gru_stack(store, name + ".outer", hidden, hidden, outer_depth, rng);
  return b;
}

DsOutput ds_aggregate(Var x, std::size_t instances, const SeriesMap& inner, const SeriesMap& outer) {
  if (instances == 0) throw ShapeError("ds_block", "empty support set (I = 0)");
  DsOutput out;
  out.per_instance = inner(x);
  out.aggregated = outer(ops::mean_instances(out.per_instance, instances));
  return out;
}

DsOutput ds_block(const Binding& params, const DsBlockParams& block, Var x, std::size_t instances) {
  return ds_aggregate(
      x, instances, [&](Var v) { return gru_stack_forward(params, block.inner, v); },
      [&](Var v) { return gru_stack_forward(params, block.outer, v); });
}

GcnBlockParams make_gcn_block(ParameterStore& store, const std::string& name, std::size_t input,
                              std::size_t hidden, std::size_t depth, Rng& rng) {
  if (depth == 0) throw ShapeError("make_gcn_block", "depth must be >= 1");
  GcnBlockParams b;
  for (std::size_t k = 0; k < depth; ++k) {
    const std::size_t in = k == 0 ? input : hidden;
    const std::string prefix = name + ".layer" + std::to_string(k);
    GcnLayerParams layer;
    layer.inner = make_gru(store, prefix + ".inner", in, hidden, rng);
    layer.outer = make_gru(store, prefix + ".outer", in + hidden, hidden, rng);
    b.layers.push_back(layer);
  }
  return b;
}

Var gcn_layer(Var x, const MotionGraph& graph, const SeriesMap& inner, const SeriesMap& outer) {
  graph.validate();
  if (graph.size() == 0 || x.dims().n % graph.size() != 0) {
    throw ShapeError("gcn_block", std::to_string(x.dims().n) + " rows do not match a graph of " +
                                      std::to_string(graph.size()) + " vertices");
  }
  const Var messages = ops::neighbor_sum(inner(x), graph.neighbor_lists());
  const Var parts[] = {x, messages};
  return outer(ops::concat_features(parts));
}

Var gcn_block(const Binding& params, const GcnBlockParams& block, Var x, const MotionGraph& graph) {
  for (const auto& layer : block.layers) {
    x = gcn_layer(
        x, graph, [&](Var v) { return gru_forward(params, layer.inner, v); },
        [&](Var v) { return gru_forward(params, layer.outer, v); });
  }
  return x;
}

GruBlockParams make_gru_block(ParameterStore& store, const std::string& name, std::size_t input,
                              std::size_t hidden, std::size_t depth, std::size_t outputs, Rng& rng) {
  GruBlockParams b;
  b.stack = make_gru_stack(store, name, input, hidden, depth, rng);
  b.readout = make_linear(store, name + ".readout", hidden, outputs, rng);
  return b;
}

Var gru_block(const Binding& params, const GruBlockParams& block, Var x) {
  return linear(params, block.readout, gru_stack_forward(params, block.stack, x));
}

Var gru_block_last(const Binding& params, const GruBlockParams& block, Var x) {
  const Var states = gru_stack_forward(params, block.stack, x);
  return linear(params, block.readout, ops::slice_time(states, states.dims().t - 1, 1));
}

}  // namespace ghn
