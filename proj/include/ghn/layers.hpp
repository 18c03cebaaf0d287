#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ghn/autodiff.hpp"
#include "ghn/graph.hpp"
#include "ghn/params.hpp"

namespace ghn {

/// One GRU cell with separate input (W), recurrent (U) and bias (b) arrays
/// for the update (z), reset (r) and candidate (h) paths.
struct GruParams {
  std::size_t input = 0;
  std::size_t hidden = 0;
  ParamRef w_z, u_z, b_z;
  ParamRef w_r, u_r, b_r;
  ParamRef w_h, u_h, b_h;

  /// 3 * (K * (in + K) + K).
  static constexpr std::size_t count(std::size_t input, std::size_t hidden) {
    return 3 * (hidden * (input + hidden) + hidden);
  }
};

/// Weights drawn uniformly from [-1/sqrt(in + K), 1/sqrt(in + K)].
GruParams make_gru(ParameterStore& store, const std::string& name, std::size_t input,
                   std::size_t hidden, Rng& rng);

/// Runs the recurrence over every row of x (N, T, in) from a zero state:
///   z = sigmoid(W_z x + U_z h + b_z), r = sigmoid(W_r x + U_r h + b_r)
///   c = tanh(W_h x + U_h (r * h) + b_h), h' = (1 - z) * h + z * c
/// and returns all hidden states (N, T, K).
Var gru_forward(const Binding& params, const GruParams& gru, Var x);
/// Same recurrence built from elementwise primitives, one step at a time.
Var gru_forward_stepwise(const Binding& params, const GruParams& gru, Var x);

struct GruStack {
  std::vector<GruParams> layers;

  std::size_t input() const { return layers.front().input; }
  std::size_t hidden() const { return layers.back().hidden; }
};

GruStack make_gru_stack(ParameterStore& store, const std::string& name, std::size_t input,
                        std::size_t hidden, std::size_t depth, Rng& rng);
Var gru_stack_forward(const Binding& params, const GruStack& stack, Var x);

struct LinearParams {
  std::size_t input = 0;
  std::size_t output = 0;
  ParamRef w, b;
};

LinearParams make_linear(ParameterStore& store, const std::string& name, std::size_t input,
                         std::size_t output, Rng& rng);
Var linear(const Binding& params, const LinearParams& lin, Var x);

/// Sequence-to-sequence map applied independently to every row.
using SeriesMap = std::function<Var(Var)>;

/// Deep-set block over instances: f (inner) and g (outer) are GRU stacks.
struct DsBlockParams {
  GruStack inner;
  GruStack outer;
};

struct DsOutput {
  /// f applied to every (instance, sensor) row: (I*C, T, K).
  Var per_instance;
  /// g(mean_i f(x_ic)) for every sensor c: (C, T, K).
  Var aggregated;
};

DsBlockParams make_ds_block(ParameterStore& store, const std::string& name, std::size_t input,
                            std::size_t hidden, std::size_t inner_depth, std::size_t outer_depth,
                            Rng& rng);
/// x has rows laid out instance-major (row = i*C + c).
DsOutput ds_block(const Binding& params, const DsBlockParams& block, Var x, std::size_t instances);
/// Aggregation skeleton of the deep-set block with arbitrary f and g.
DsOutput ds_aggregate(Var x, std::size_t instances, const SeriesMap& inner, const SeriesMap& outer);

/// One graph layer: f prepares neighbor messages (in -> K), g updates each
/// vertex from [own features, summed messages] (in + K -> K).
struct GcnLayerParams {
  GruParams inner;
  GruParams outer;
};

struct GcnBlockParams {
  std::vector<GcnLayerParams> layers;

  std::size_t output() const { return layers.back().outer.hidden; }
};

GcnBlockParams make_gcn_block(ParameterStore& store, const std::string& name, std::size_t input,
                              std::size_t hidden, std::size_t depth, Rng& rng);
/// x rows are (instance, vertex) pairs, row = i*C + c with C = graph.size().
Var gcn_block(const Binding& params, const GcnBlockParams& block, Var x, const MotionGraph& graph);
/// u_ic = g([x_ic, sum over j in N(c) of f(x_ij)]) for arbitrary f and g.
Var gcn_layer(Var x, const MotionGraph& graph, const SeriesMap& inner, const SeriesMap& outer);

/// Stacked GRUs followed by a per-step linear readout.
struct GruBlockParams {
  GruStack stack;
  LinearParams readout;
};

GruBlockParams make_gru_block(ParameterStore& store, const std::string& name, std::size_t input,
                              std::size_t hidden, std::size_t depth, std::size_t outputs, Rng& rng);
/// Readout at every time step: (N, T, outputs).
Var gru_block(const Binding& params, const GruBlockParams& block, Var x);
/// Readout of the final hidden state only: (N, 1, outputs).
Var gru_block_last(const Binding& params, const GruBlockParams& block, Var x);

}  // namespace ghn
