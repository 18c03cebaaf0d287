#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ghn/tensor.hpp"

namespace ghn {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor3& value() const;
  const Dims& dims() const { return value().dims(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records primitive operations in execution order and replays them in
/// reverse to accumulate gradients. Nodes are appended only, so creation
/// order is a topological order of the computation.
///
/// A tape is single-threaded. Separate tapes may run concurrently.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor3& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient (inputs, masks, targets).
  Var constant(Tensor3 value);
  /// Leaf that receives a gradient.
  Var parameter(Tensor3 value);

  /// Appends the result of a primitive. `backward` is invoked with the
  /// gradient of this node and must push contributions into its inputs via
  /// grad_slot().
  Var record(Tensor3 value, std::span<const Var> inputs, Backward backward);

  /// Reverse sweep from a scalar (1,1,1) node. May be called once per tape.
  void backward(Var loss);

  /// Gradient of a node after backward(); zeros if the node was not reached.
  Tensor3 grad(Var v) const;

  /// Writable gradient accumulator for node `id`, or nullptr when that node
  /// does not depend on any parameter.
  Tensor3* grad_slot(std::size_t id);

  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  const Tensor3& value(std::size_t id) const { return nodes_.at(id).value; }
  std::size_t size() const { return nodes_.size(); }
  /// Number of nodes whose backward closure ran during the last sweep.
  std::size_t visited() const { return visited_; }

 private:
  struct Node {
    Tensor3 value;
    Tensor3 grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  std::size_t visited_ = 0;
  bool swept_ = false;
};

/// Differentiable primitives. Every op checks shapes, throws ShapeError on a
/// mismatch and records one tape entry. Inputs must live on the same tape.
namespace ops {

/// (N,T,F) x (1,F,G) -> (N,T,G): contracts the feature axis with a matrix
/// stored as a rank-3 array with a single row block.
Var matmul(Var x, Var w);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Adds a (1,1,F) vector to every row and time step of an (N,T,F) array.
Var add_bias(Var x, Var bias);
Var sigmoid(Var x);
Var tanh(Var x);
/// Concatenation along the feature axis; all parts share N and T.
Var concat_features(std::span<const Var> parts);
/// Concatenation along time; all parts share N and F.
Var concat_time(std::span<const Var> parts);
/// Time steps [start, start + len).
Var slice_time(Var x, std::size_t start, std::size_t len);
/// Rows are laid out instance-major (row = i*C + c). Averages the I
/// instances of each sensor, giving (C,T,F).
Var mean_instances(Var x, std::size_t instances);
/// (C,T,F) -> (I*C,T,F) by repeating the block for each instance.
Var broadcast_instances(Var x, std::size_t instances);
/// (N,1,F) -> (N,T,F).
Var broadcast_time(Var x, std::size_t steps);
/// Row (i, c) of the result is the sum of rows (i, j) over j in
/// neighbors[c], accumulated in list order. Sensors with no neighbors
/// receive zeros.
Var neighbor_sum(Var x, const std::vector<std::vector<std::size_t>>& neighbors);
/// Weights of one GRU cell: input (1,in,K), recurrent (1,K,K) and bias
/// (1,1,K) arrays for the update, reset and candidate paths.
struct GruWeights {
  Var w_z, u_z, b_z;
  Var w_r, u_r, b_r;
  Var w_h, u_h, b_h;
};
/// Whole GRU recurrence over (N,T,in) from a zero state as one tape entry,
/// returning every hidden state (N,T,K). Forward values equal the
/// composition of the elementwise primitives step by step.
Var gru_sequence(Var x, const GruWeights& w);
/// Sum of all entries as a (1,1,1) node.
Var sum(Var x);
/// Mean of all entries as a (1,1,1) node.
Var mean(Var x);

}  // namespace ops

}  // namespace ghn
