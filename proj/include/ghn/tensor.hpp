#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ghn {

/// Extents of a rank-3 array: rows (instances, or instance x sensor pairs),
/// time steps and features.
struct Dims {
  std::size_t n = 0;
  std::size_t t = 0;
  std::size_t c = 0;

  constexpr std::size_t size() const { return n * t * c; }
  friend constexpr bool operator==(const Dims&, const Dims&) = default;
  std::string str() const;
};

/// Thrown when operands of a primitive have incompatible extents.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Dims& a, const Dims& b);
  ShapeError(const std::string& op, const std::string& what);

  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

/// Dense row-major (n, t, c) array of doubles.
class Tensor3 {
 public:
  Tensor3() = default;
  explicit Tensor3(Dims dims, double fill = 0.0);
  Tensor3(Dims dims, std::vector<double> values);
  Tensor3(std::size_t n, std::size_t t, std::size_t c, double fill = 0.0)
      : Tensor3(Dims{n, t, c}, fill) {}

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t n, std::size_t t, std::size_t c) {
    return data_[(n * dims_.t + t) * dims_.c + c];
  }
  double operator()(std::size_t n, std::size_t t, std::size_t c) const {
    return data_[(n * dims_.t + t) * dims_.c + c];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  bool all_finite() const;
  void fill(double v);
  Tensor3& operator+=(const Tensor3& other);

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  Dims dims_{};
  std::vector<double> data_;
};

/// Reorders an (instances, time, sensors) array into the row layout used by
/// the layers: row i*C + c holds the univariate series of sensor c of
/// instance i, with a single feature.
Tensor3 to_rows(const Tensor3& x);

/// Inverse of to_rows for a (I*C, 1, H) head output: returns (I, H, C).
Tensor3 from_rows(const Tensor3& rows, std::size_t instances);

/// Joins two (I, *, C) arrays along time.
Tensor3 concat_time(const Tensor3& a, const Tensor3& b);

/// Stacks the instances of b after those of a.
Tensor3 concat_instances(const Tensor3& a, const Tensor3& b);

}  // namespace ghn
