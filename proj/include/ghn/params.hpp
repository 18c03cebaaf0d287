#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ghn/autodiff.hpp"
#include "ghn/tensor.hpp"

namespace ghn {

using Rng = std::mt19937_64;

/// Index of a trainable array inside a ParameterStore.
struct ParamRef {
  std::size_t index = 0;
};

/// Named, ordered collection of trainable arrays. Matrices are stored as
/// (1, rows, cols) and vectors as (1, 1, len).
class ParameterStore {
 public:
  ParamRef add(std::string name, Tensor3 value);
  /// Uniform in [-bound, bound].
  ParamRef add_uniform(std::string name, Dims dims, double bound, Rng& rng);

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const { return names_; }
  const Tensor3& operator[](ParamRef ref) const { return values_.at(ref.index); }
  Tensor3& operator[](ParamRef ref) { return values_.at(ref.index); }
  const std::vector<Tensor3>& values() const { return values_; }
  std::vector<Tensor3>& values() { return values_; }

  /// Total number of trainable scalars.
  std::size_t scalar_count() const;
  /// FNV-1a over the raw bytes of every value, for change detection.
  std::uint64_t checksum() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor3> values_;
};

/// Places every parameter of a store on a tape as a gradient leaf.
class Binding {
 public:
  Binding(Tape& tape, const ParameterStore& store);
  /// Uses existing nodes, one per store entry in store order.
  Binding(Tape& tape, std::vector<Var> vars) : tape_(&tape), vars_(std::move(vars)) {}

  Var operator[](ParamRef ref) const { return vars_.at(ref.index); }
  Tape& tape() const { return *tape_; }
  /// Per-parameter gradients after tape.backward(), in store order.
  std::vector<Tensor3> gradients() const;

 private:
  Tape* tape_;
  std::vector<Var> vars_;
};

}  // namespace ghn
