#pragma once

// Central finite-difference oracle for tape gradients. Independent of the
// reverse sweep: it only evaluates forward passes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ghn/autodiff.hpp"

namespace ghn::testing {

/// Builds a scalar loss on `tape` from leaves created for `inputs`.
using LossFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Relative error with a 1e-5 magnitude floor, below which finite
/// differences are dominated by rounding.
inline double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-5});
  return std::abs(a - b) / denom;
}

inline double eval_loss(const LossFn& fn, const std::vector<Tensor3>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.constant(t));
  return fn(tape, leaves).value()[0];
}

/// Compares analytic gradients of every input entry (or up to `max_entries`
/// random entries per input) against central differences with step `h`.
inline GradCheckResult grad_check(const LossFn& fn, std::vector<Tensor3> inputs, double h = 1e-5,
                                  std::size_t max_entries = 0, unsigned seed = 1) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.parameter(t));
  const Var loss = fn(tape, leaves);
  tape.backward(loss);

  GradCheckResult result;
  std::mt19937 rng(seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor3 analytic = tape.grad(leaves[k]);
    std::vector<std::size_t> entries(inputs[k].size());
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
    if (max_entries != 0 && entries.size() > max_entries) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(max_entries);
    }
    for (std::size_t i : entries) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + h;
      const double up = eval_loss(fn, inputs);
      inputs[k][i] = orig - h;
      const double down = eval_loss(fn, inputs);
      inputs[k][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[i], numeric));
      ++result.checked;
    }
  }
  return result;
}

inline Tensor3 random_tensor(Dims d, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor3 t(d);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

/// sum(out * weights) with fixed pseudo-random weights, so every output
/// entry contributes a distinct amount to the loss.
inline Var project(Tape& tape, Var out, unsigned seed = 99) {
  std::mt19937_64 rng(seed);
  return ops::sum(ops::mul(out, tape.constant(random_tensor(out.dims(), rng))));
}

}  // namespace ghn::testing
