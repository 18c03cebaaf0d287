#include "ghn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ghn {

std::string Dims::str() const {
  std::ostringstream os;
  os << '(' << n << ", " << t << ", " << c << ')';
  return os.str();
}

ShapeError::ShapeError(const std::string& op, const Dims& a, const Dims& b)
    : std::invalid_argument(op + ": shape mismatch " + a.str() + " vs " + b.str()),
      op_(op) {}

ShapeError::ShapeError(const std::string& op, const std::string& what)
    : std::invalid_argument(op + ": " + what), op_(op) {}

namespace {
void check_dims(const Dims& d) {
  if (d.n == 0 || d.t == 0 || d.c == 0) {
    throw ShapeError("tensor", "all extents must be >= 1, got " + d.str());
  }
}
}  // namespace

Tensor3::Tensor3(Dims dims, double fill) : dims_(dims) {
  check_dims(dims);
  data_.assign(dims.size(), fill);
}

Tensor3::Tensor3(Dims dims, std::vector<double> values)
    : dims_(dims), data_(std::move(values)) {
  check_dims(dims);
  if (data_.size() != dims.size()) {
    throw ShapeError("tensor", "data length " + std::to_string(data_.size()) +
                                   " does not match " + dims.str());
  }
}

bool Tensor3::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor3::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor3& Tensor3::operator+=(const Tensor3& other) {
  if (other.dims_ != dims_) throw ShapeError("+=", dims_, other.dims_);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor3 to_rows(const Tensor3& x) {
  const auto [inst, time, sensors] = x.dims();
  Tensor3 out(inst * sensors, time, 1);
  for (std::size_t i = 0; i < inst; ++i)
    for (std::size_t t = 0; t < time; ++t)
      for (std::size_t c = 0; c < sensors; ++c) out(i * sensors + c, t, 0) = x(i, t, c);
  return out;
}

Tensor3 from_rows(const Tensor3& rows, std::size_t instances) {
  const auto& d = rows.dims();
  if (instances == 0 || d.n % instances != 0 || d.t != 1) {
    throw ShapeError("from_rows", "expected (I*C, 1, H) rows, got " + d.str());
  }
  const std::size_t sensors = d.n / instances;
  Tensor3 out(instances, d.c, sensors);
  for (std::size_t i = 0; i < instances; ++i)
    for (std::size_t c = 0; c < sensors; ++c)
      for (std::size_t h = 0; h < d.c; ++h) out(i, h, c) = rows(i * sensors + c, 0, h);
  return out;
}

Tensor3 concat_time(const Tensor3& a, const Tensor3& b) {
  if (a.dims().n != b.dims().n || a.dims().c != b.dims().c) {
    throw ShapeError("concat_time", a.dims(), b.dims());
  }
  const auto& da = a.dims();
  const auto& db = b.dims();
  Tensor3 out(da.n, da.t + db.t, da.c);
  for (std::size_t n = 0; n < da.n; ++n) {
    for (std::size_t t = 0; t < da.t; ++t)
      for (std::size_t c = 0; c < da.c; ++c) out(n, t, c) = a(n, t, c);
    for (std::size_t t = 0; t < db.t; ++t)
      for (std::size_t c = 0; c < da.c; ++c) out(n, da.t + t, c) = b(n, t, c);
  }
  return out;
}

Tensor3 concat_instances(const Tensor3& a, const Tensor3& b) {
  if (a.dims().t != b.dims().t || a.dims().c != b.dims().c) {
    throw ShapeError("concat_instances", a.dims(), b.dims());
  }
  std::vector<double> values = a.storage();
  values.insert(values.end(), b.storage().begin(), b.storage().end());
  return Tensor3(Dims{a.dims().n + b.dims().n, a.dims().t, a.dims().c}, std::move(values));
}

}  // namespace ghn
