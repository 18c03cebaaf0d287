#include "ghn/params.hpp"

#include <cstring>

namespace ghn {

ParamRef ParameterStore::add(std::string name, Tensor3 value) {
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return ParamRef{values_.size() - 1};
}

ParamRef ParameterStore::add_uniform(std::string name, Dims dims, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor3 value(dims);
  for (double& v : value.values()) v = dist(rng);
  return add(std::move(name), std::move(value));
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t total = 0;
  for (const auto& v : values_) total += v.size();
  return total;
}

std::uint64_t ParameterStore::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& v : values_) {
    for (double d : v.values()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &d, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

Binding::Binding(Tape& tape, const ParameterStore& store) : tape_(&tape) {
  vars_.reserve(store.size());
  for (const auto& v : store.values()) vars_.push_back(tape.parameter(v));
}

std::vector<Tensor3> Binding::gradients() const {
  std::vector<Tensor3> out;
  out.reserve(vars_.size());
  for (const Var& v : vars_) out.push_back(tape_->grad(v));
  return out;
}

}  // namespace ghn
