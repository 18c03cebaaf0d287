#include "ghn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <array>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace ghn {

namespace {
double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tape& same_tape(const char* op, std::initializer_list<Var> vars) {
  Tape* tape = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw ShapeError(op, "uninitialized operand");
    if (tape == nullptr) tape = v.tape();
    if (v.tape() != tape) throw ShapeError(op, "operands live on different tapes");
  }
  return *tape;
}

Tape& same_tape(const char* op, std::span<const Var> vars) {
  if (vars.empty()) throw ShapeError(op, "no operands");
  Tape* tape = vars.front().tape();
  for (const Var& v : vars) {
    if (!v.valid() || v.tape() != tape) throw ShapeError(op, "operands live on different tapes");
  }
  return *tape;
}

void require_same(const char* op, const Var& a, const Var& b) {
  if (a.dims() != b.dims()) throw ShapeError(op, a.dims(), b.dims());
}

using Pack = double __attribute__((vector_size(32)));

inline Pack load_pack(const double* p) {
  Pack v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void add_pack(double* p, Pack v) {
  v += load_pack(p);
  std::memcpy(p, &v, sizeof v);
}

template <std::size_t R>
void gemm_block(const double* a, const double* b, double* c, std::size_t inner, std::size_t cols) {
  std::size_t j0 = 0;
  for (; j0 + 8 <= cols; j0 += 8) {
    Pack lo[R] = {}, hi[R] = {};
    for (std::size_t k = 0; k < inner; ++k) {
      const Pack b0 = load_pack(b + k * cols + j0);
      const Pack b1 = load_pack(b + k * cols + j0 + 4);
      for (std::size_t r = 0; r < R; ++r) {
        const double v = a[r * inner + k];
        lo[r] += v * b0;
        hi[r] += v * b1;
      }
    }
    for (std::size_t r = 0; r < R; ++r) {
      add_pack(c + r * cols + j0, lo[r]);
      add_pack(c + r * cols + j0 + 4, hi[r]);
    }
  }
  for (; j0 + 4 <= cols; j0 += 4) {
    Pack lo[R] = {};
    for (std::size_t k = 0; k < inner; ++k) {
      const Pack b0 = load_pack(b + k * cols + j0);
      for (std::size_t r = 0; r < R; ++r) lo[r] += a[r * inner + k] * b0;
    }
    for (std::size_t r = 0; r < R; ++r) add_pack(c + r * cols + j0, lo[r]);
  }
  for (; j0 < cols; ++j0)
    for (std::size_t r = 0; r < R; ++r) {
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += a[r * inner + k] * b[k * cols + j0];
      c[r * cols + j0] += acc;
    }
}

// c[r, :] += a[r, :] * B for every row r, with a (rows x inner) and B
// (inner x cols). Every entry is reduced over k in ascending order and then
// added to c; the library is built without floating-point contraction, so
// blocked and remainder rows round identically and a row's result never
// depends on the other rows.
void gemm_rows(const double* a, const double* b, double* c, std::size_t rows, std::size_t inner,
               std::size_t cols) {
  std::size_t r = 0;
  for (; r + 4 <= rows; r += 4) gemm_block<4>(a + r * inner, b, c + r * cols, inner, cols);
  for (; r < rows; ++r) gemm_block<1>(a + r * inner, b, c + r * cols, inner, cols);
}

std::vector<double> transpose(const double* m, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = m[r * cols + c];
  return out;
}
}  // namespace

const Tensor3& Var::value() const {
  if (tape_ == nullptr) throw std::logic_error("Var::value on an empty handle");
  return tape_->value(id_);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor3 value) {
  if (!value.all_finite()) throw std::invalid_argument("constant: non-finite input");
  return push(Node{std::move(value), {}, false, {}});
}

Var Tape::parameter(Tensor3 value) {
  if (!value.all_finite()) throw std::invalid_argument("parameter: non-finite value");
  return push(Node{std::move(value), {}, true, {}});
}

Var Tape::record(Tensor3 value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& in : inputs) needs = needs || nodes_.at(in.id()).requires_grad;
  Node node{std::move(value), {}, needs, {}};
  if (needs) node.backward = std::move(backward);
  return push(std::move(node));
}

Tensor3* Tape::grad_slot(std::size_t id) {
  Node& node = nodes_.at(id);
  if (!node.requires_grad) return nullptr;
  if (node.grad.empty()) node.grad = Tensor3(node.value.dims(), 0.0);
  return &node.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss is not on this tape");
  if (nodes_.empty()) throw std::logic_error("backward: empty tape");
  if (swept_) throw std::logic_error("backward: tape already swept");
  if (loss.dims() != Dims{1, 1, 1}) {
    throw ShapeError("backward", "loss must be a scalar (1, 1, 1), got " + loss.dims().str());
  }
  swept_ = true;
  visited_ = 0;
  Tensor3* seed = grad_slot(loss.id());
  if (seed == nullptr) return;
  (*seed)[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
    ++visited_;
    node.backward(*this, node.grad);
  }
}

Tensor3 Tape::grad(Var v) const {
  const Node& node = nodes_.at(v.id());
  if (node.grad.empty()) return Tensor3(node.value.dims(), 0.0);
  return node.grad;
}

namespace ops {

Var matmul(Var x, Var w) {
  Tape& tape = same_tape("matmul", {x, w});
  const Dims dx = x.dims();
  const Dims dw = w.dims();
  if (dw.n != 1 || dw.t != dx.c) throw ShapeError("matmul", dx, dw);
  const std::size_t rows = dx.n * dx.t;
  const std::size_t inner = dx.c;
  const std::size_t cols = dw.c;
  Tensor3 out(dx.n, dx.t, cols);
  gemm_rows(x.value().storage().data(), w.value().storage().data(), out.storage().data(), rows, inner, cols);
  const std::size_t xi = x.id(), wi = w.id();
  const Var ins[] = {x, w};
  return tape.record(std::move(out), ins, [=](Tape& tp, const Tensor3& g) {
    const double* gs = g.storage().data();
    if (Tensor3* gx = tp.grad_slot(xi)) {
      const std::vector<double> wt = transpose(tp.value(wi).storage().data(), inner, cols);
      gemm_rows(gs, wt.data(), gx->storage().data(), rows, cols, inner);
    }
    if (Tensor3* gw = tp.grad_slot(wi)) {
      const std::vector<double> xt = transpose(tp.value(xi).storage().data(), rows, inner);
      gemm_rows(xt.data(), gs, gw->storage().data(), inner, rows, cols);
    }
  });
}

Var add(Var a, Var b) {
  Tape& tape = same_tape("add", {a, b});
  require_same("add", a, b);
  Tensor3 out = a.value();
  out += b.value();
  const std::size_t ai = a.id(), bi = b.id();
  const Var ins[] = {a, b};
  return tape.record(std::move(out), ins, [=](Tape& tp, const Tensor3& g) {
    if (Tensor3* ga = tp.grad_slot(ai)) *ga += g;
    if (Tensor3* gb = tp.grad_slot(bi)) *gb += g;
  });
}

Var sub(Var a, Var b) {
  Tape& tape = same_tape("sub", {a, b});
  require_same("sub", a, b);
  Tensor3 out = a.value();
  const auto& bv = b.value().storage();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  const Var ins[] = {a, b};
  return tape.record(std::move(out), ins, [=](Tape& tp, const Tensor3& g) {
    if (Tensor3* ga = tp.grad_slot(ai)) *ga += g;
    if (Tensor3* gb = tp.grad_slot(bi)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& tape = same_tape("mul", {a, b});
  require_same("mul", a, b);
  Tensor3 out = a.value();
  const auto& bv = b.value().storage();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  const Var ins[] = {a, b};
  return tape.record(std::move(out), ins, [=](Tape& tp, const Tensor3& g) {
    if (Tensor3* ga = tp.grad_slot(ai)) {
      const Tensor3& bv2 = tp.value(bi);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv2[i];
    }
    if (Tensor3* gb = tp.grad_slot(bi)) {
      const Tensor3& av = tp.value(ai);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tape& tape = same_tape("scale", {a});
  Tensor3 out = a.value();
  for (double& v : out.values()) v *= s;
  const std::size_t ai = a.id();
  const Var ins[] = {a};
  return tape.record(std::move(out), ins, [=](Tape& tp, const Tensor3& g) {
    if (Tensor3* ga = tp.grad_slot(ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
    }
  });
}

Var add_bias(Var x, Var bias) {
  Tape& tape = same_tape("add_bias", {x, bias});
  const Dims dx = x.dims();
  if (bias.dims() != Dims{1, 1, dx.c}) throw ShapeError("add_bias", dx, bias.dims());
  Tensor3 out = x.value();
  const auto& b = bias.value().storage();
  const std::size_t rows = dx.n * dx.t;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < dx.c; ++c) out[r * dx.c + c] += b[c];
  const std::size_t xi = x.id(), bi = bias.id();
  const Var ins[] = {x, bias};
  return tape.record(std::move(out), ins, [=](Tape& tp, const Tensor3& g) {
    if (Tensor3* gx = tp.grad_slot(xi)) *gx += g;
    if (Tensor3* gb = tp.grad_slot(bi)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < dx.c; ++c) (*gb)[c] += g[r * dx.c + c];
    }
  });
}

Var sigmoid(Var x) {
  Tape& tape = same_tape("sigmoid", {x});
  Tensor3 out = x.value();
  for (double& v : out.values()) v = stable_sigmoid(v);
  const std::size_t xi = x.id();
  const std::size_t yi = tape.size();
  const Var ins[] = {x};
  return tape.record(std::move(out), ins, [=](Tape& tp, const Tensor3& g) {
    if (Tensor3* gx = tp.grad_slot(xi)) {
      const Tensor3& y = tp.value(yi);
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i] * (1.0 - y[i]);
    }
  });
}

Var tanh(Var x) {
  Tape& tape = same_tape("tanh", {x});
  Tensor3 out = x.value();
  for (double& v : out.values()) v = std::tanh(v);
  const std::size_t xi = x.id();
  const std::size_t yi = tape.size();
  const Var ins[] = {x};
  return tape.record(std::move(out), ins, [=](Tape& tp, const Tensor3& g) {
    if (Tensor3* gx = tp.grad_slot(xi)) {
      const Tensor3& y = tp.value(yi);
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (1.0 - y[i] * y[i]);
    }
  });
}

Var concat_features(std::span<const Var> parts) {
  Tape& tape = same_tape("concat_features", parts);
  const Dims d0 = parts.front().dims();
  std::vector<std::size_t> widths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Dims d = p.dims();
    if (d.n != d0.n || d.t != d0.t) throw ShapeError("concat_features", d0, d);
    widths.push_back(d.c);
    ids.push_back(p.id());
    total += d.c;
  }
  const std::size_t rows = d0.n * d0.t;
  Tensor3 out(d0.n, d0.t, total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& src = parts[k].value().storage();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src.begin() + r * widths[k], widths[k], out.storage().begin() + r * total + offset);
    offset += widths[k];
  }
  return tape.record(std::move(out), parts, [=](Tape& tp, const Tensor3& g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (Tensor3* gp = tp.grad_slot(ids[k])) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) (*gp)[r * widths[k] + c] += g[r * total + off + c];
      }
      off += widths[k];
    }
  });
}

Var concat_time(std::span<const Var> parts) {
  Tape& tape = same_tape("concat_time", parts);
  const Dims d0 = parts.front().dims();
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Dims d = p.dims();
    if (d.n != d0.n || d.c != d0.c) throw ShapeError("concat_time", d0, d);
    lengths.push_back(d.t);
    ids.push_back(p.id());
    total += d.t;
  }
  const std::size_t width = d0.c;
  Tensor3 out(d0.n, total, width);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& src = parts[k].value().storage();
    const std::size_t len = lengths[k];
    for (std::size_t n = 0; n < d0.n; ++n)
      std::copy_n(src.begin() + n * len * width, len * width,
                  out.storage().begin() + (n * total + offset) * width);
    offset += len;
  }
  const std::size_t rows = d0.n;
  return tape.record(std::move(out), parts, [=](Tape& tp, const Tensor3& g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t len = lengths[k];
      if (Tensor3* gp = tp.grad_slot(ids[k])) {
        for (std::size_t n = 0; n < rows; ++n)
          for (std::size_t i = 0; i < len * width; ++i)
            (*gp)[n * len * width + i] += g[(n * total + off) * width + i];
      }
      off += len;
    }
  });
}

Var slice_time(Var x, std::size_t start, std::size_t len) {
  Tape& tape = same_tape("slice_time", {x});
  const Dims d = x.dims();
  if (len == 0 || start + len > d.t) {
    throw ShapeError("slice_time", "range [" + std::to_string(start) + ", " +
                                       std::to_string(start + len) + ") outside " + d.str());
  }
  Tensor3 out(d.n, len, d.c);
  const auto& src = x.value().storage();
  for (std::size_t n = 0; n < d.n; ++n)
    std::copy_n(src.begin() + (n * d.t + start) * d.c, len * d.c,
                out.storage().begin() + n * len * d.c);
  const std::size_t xi = x.id();
  const Var ins[] = {x};
  return tape.record(std::move(out), ins, [=](Tape& tp, const Tensor3& g) {
    if (Tensor3* gx = tp.grad_slot(xi)) {
      for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t i = 0; i < len * d.c; ++i)
          (*gx)[(n * d.t + start) * d.c + i] += g[n * len * d.c + i];
    }
  });
}

Var mean_instances(Var x, std::size_t instances) {
  Tape& tape = same_tape("mean_instances", {x});
  const Dims d = x.dims();
  if (instances == 0) throw ShapeError("mean_instances", "empty instance set");
  if (d.n % instances != 0) {
    throw ShapeError("mean_instances", std::to_string(d.n) + " rows not divisible into " +
                                           std::to_string(instances) + " instances");
  }
  const std::size_t sensors = d.n / instances;
  const std::size_t block = sensors * d.t * d.c;
  const double inv = 1.0 / static_cast<double>(instances);
  // Each mean is summed in ascending value order, which makes the result
  // bitwise independent of the instance order.
  Tensor3 out(sensors, d.t, d.c);
  const auto& src = x.value().storage();
  std::vector<double> column(instances);
  for (std::size_t k = 0; k < block; ++k) {
    for (std::size_t i = 0; i < instances; ++i) column[i] = src[i * block + k];
    std::sort(column.begin(), column.end());
    double acc = 0.0;
    for (double v : column) acc += v;
    out[k] = acc * inv;
  }
  const std::size_t xi = x.id();
  const Var ins[] = {x};
  return tape.record(std::move(out), ins, [=](Tape& tp, const Tensor3& g) {
    if (Tensor3* gx = tp.grad_slot(xi)) {
      for (std::size_t i = 0; i < instances; ++i)
        for (std::size_t k = 0; k < block; ++k) (*gx)[i * block + k] += inv * g[k];
    }
  });
}

Var broadcast_instances(Var x, std::size_t instances) {
  Tape& tape = same_tape("broadcast_instances", {x});
  if (instances == 0) throw ShapeError("broadcast_instances", "zero instances");
  const Dims d = x.dims();
  const std::size_t block = d.size();
  Tensor3 out(d.n * instances, d.t, d.c);
  const auto& src = x.value().storage();
  for (std::size_t i = 0; i < instances; ++i)
    std::copy(src.begin(), src.end(), out.storage().begin() + i * block);
  const std::size_t xi = x.id();
  const Var ins[] = {x};
  return tape.record(std::move(out), ins, [=](Tape& tp, const Tensor3& g) {
    if (Tensor3* gx = tp.grad_slot(xi)) {
      for (std::size_t i = 0; i < instances; ++i)
        for (std::size_t k = 0; k < block; ++k) (*gx)[k] += g[i * block + k];
    }
  });
}

Var broadcast_time(Var x, std::size_t steps) {
  Tape& tape = same_tape("broadcast_time", {x});
  const Dims d = x.dims();
  if (d.t != 1 || steps == 0) {
    throw ShapeError("broadcast_time", "expected a single time step, got " + d.str());
  }
  Tensor3 out(d.n, steps, d.c);
  const auto& src = x.value().storage();
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t t = 0; t < steps; ++t)
      std::copy_n(src.begin() + n * d.c, d.c, out.storage().begin() + (n * steps + t) * d.c);
  const std::size_t xi = x.id();
  const Var ins[] = {x};
  return tape.record(std::move(out), ins, [=](Tape& tp, const Tensor3& g) {
    if (Tensor3* gx = tp.grad_slot(xi)) {
      for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t t = 0; t < steps; ++t)
          for (std::size_t c = 0; c < d.c; ++c) (*gx)[n * d.c + c] += g[(n * steps + t) * d.c + c];
    }
  });
}

Var neighbor_sum(Var x, const std::vector<std::vector<std::size_t>>& neighbors) {
  Tape& tape = same_tape("neighbor_sum", {x});
  const Dims d = x.dims();
  const std::size_t sensors = neighbors.size();
  if (sensors == 0 || d.n % sensors != 0) {
    throw ShapeError("neighbor_sum", std::to_string(d.n) + " rows do not match " +
                                         std::to_string(sensors) + " vertices");
  }
  for (const auto& list : neighbors)
    for (std::size_t j : list)
      if (j >= sensors) throw ShapeError("neighbor_sum", "neighbor index out of range");
  const std::size_t instances = d.n / sensors;
  const std::size_t row = d.t * d.c;
  Tensor3 out(d);
  const auto& src = x.value().storage();
  for (std::size_t i = 0; i < instances; ++i)
    for (std::size_t c = 0; c < sensors; ++c)
      for (std::size_t j : neighbors[c]) {
        const std::size_t from = (i * sensors + j) * row;
        const std::size_t to = (i * sensors + c) * row;
        for (std::size_t k = 0; k < row; ++k) out[to + k] += src[from + k];
      }
  const std::size_t xi = x.id();
  const Var ins[] = {x};
  auto nbrs = neighbors;
  return tape.record(std::move(out), ins, [=](Tape& tp, const Tensor3& g) {
    if (Tensor3* gx = tp.grad_slot(xi)) {
      for (std::size_t i = 0; i < instances; ++i)
        for (std::size_t c = 0; c < sensors; ++c)
          for (std::size_t j : nbrs[c]) {
            const std::size_t from = (i * sensors + j) * row;
            const std::size_t to = (i * sensors + c) * row;
            for (std::size_t k = 0; k < row; ++k) (*gx)[from + k] += g[to + k];
          }
    }
  });
}

namespace {

struct GruTrace {
  std::size_t n = 0, t = 0, in = 0, k = 0;
  // Time-major per-step buffers, row s*N + i.
  std::vector<double> z, r, c, h_prev, rh, x_tm;
};

}  // namespace

Var gru_sequence(Var x, const GruWeights& w) {
  const Var all[] = {x, w.w_z, w.u_z, w.b_z, w.w_r, w.u_r, w.b_r, w.w_h, w.u_h, w.b_h};
  Tape& tape = same_tape("gru_sequence", std::span<const Var>(all));
  const Dims d = x.dims();
  const std::size_t n = d.n, steps = d.t, in = d.c, k = w.u_z.dims().c;
  for (const Var* m : {&w.w_z, &w.w_r, &w.w_h})
    if (m->dims() != Dims{1, in, k}) throw ShapeError("gru_sequence", d, m->dims());
  for (const Var* m : {&w.u_z, &w.u_r, &w.u_h})
    if (m->dims() != Dims{1, k, k}) throw ShapeError("gru_sequence", Dims{1, k, k}, m->dims());
  for (const Var* m : {&w.b_z, &w.b_r, &w.b_h})
    if (m->dims() != Dims{1, 1, k}) throw ShapeError("gru_sequence", Dims{1, 1, k}, m->dims());

  const std::size_t rows = n * steps;
  auto project = [&](const Var& weight, const Var& bias) {
    std::vector<double> out(rows * k, 0.0);
    gemm_rows(x.value().storage().data(), weight.value().storage().data(), out.data(), rows, in, k);
    const auto& b = bias.value().storage();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < k; ++j) out[r * k + j] += b[j];
    return out;
  };
  const std::vector<double> xz = project(w.w_z, w.b_z);
  const std::vector<double> xr = project(w.w_r, w.b_r);
  const std::vector<double> xh = project(w.w_h, w.b_h);

  auto trace = std::make_shared<GruTrace>();
  trace->n = n;
  trace->t = steps;
  trace->in = in;
  trace->k = k;
  const std::size_t block = n * k;
  trace->z.resize(steps * block);
  trace->r.resize(steps * block);
  trace->c.resize(steps * block);
  trace->h_prev.assign(steps * block, 0.0);
  trace->rh.resize(steps * block);
  const double* uz = w.u_z.value().storage().data();
  const double* ur = w.u_r.value().storage().data();
  const double* uh = w.u_h.value().storage().data();

  Tensor3 out(n, steps, k);
  std::vector<double> h(block, 0.0), mz(block), mr(block), mc(block);
  for (std::size_t s = 0; s < steps; ++s) {
    double* hp = trace->h_prev.data() + s * block;
    std::copy(h.begin(), h.end(), hp);
    std::fill(mz.begin(), mz.end(), 0.0);
    std::fill(mr.begin(), mr.end(), 0.0);
    std::fill(mc.begin(), mc.end(), 0.0);
    gemm_rows(hp, uz, mz.data(), n, k, k);
    gemm_rows(hp, ur, mr.data(), n, k, k);
    double* zs = trace->z.data() + s * block;
    double* rs = trace->r.data() + s * block;
    double* rh = trace->rh.data() + s * block;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t src = (i * steps + s) * k + j, dst = i * k + j;
        zs[dst] = stable_sigmoid(xz[src] + mz[dst]);
        rs[dst] = stable_sigmoid(xr[src] + mr[dst]);
        rh[dst] = rs[dst] * hp[dst];
      }
    gemm_rows(rh, uh, mc.data(), n, k, k);
    double* cs = trace->c.data() + s * block;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t src = (i * steps + s) * k + j, dst = i * k + j;
        cs[dst] = std::tanh(xh[src] + mc[dst]);
        h[dst] = hp[dst] + zs[dst] * (cs[dst] - hp[dst]);
        out(i, s, j) = h[dst];
      }
  }
  trace->x_tm.resize(steps * n * in);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < steps; ++s)
      std::copy_n(x.value().storage().data() + (i * steps + s) * in, in, trace->x_tm.data() + (s * n + i) * in);

  std::array<std::size_t, 10> ids{};
  for (std::size_t q = 0; q < 10; ++q) ids[q] = all[q].id();
  return tape.record(std::move(out), all, [=](Tape& tp, const Tensor3& g) {
    const GruTrace& tr = *trace;
    const std::size_t nn = tr.n, tt = tr.t, kk = tr.k, ii = tr.in, blk = nn * kk;
    const std::vector<double> uzt = transpose(tp.value(ids[2]).storage().data(), kk, kk);
    const std::vector<double> urt = transpose(tp.value(ids[5]).storage().data(), kk, kk);
    const std::vector<double> uht = transpose(tp.value(ids[8]).storage().data(), kk, kk);
    // Pre-activation gradients, time-major.
    std::vector<double> az(tt * blk), ar(tt * blk), ac(tt * blk);
    std::vector<double> dh(blk, 0.0), drh(blk), next(blk);
    for (std::size_t s = tt; s-- > 0;) {
      const double* zs = tr.z.data() + s * blk;
      const double* rs = tr.r.data() + s * blk;
      const double* cs = tr.c.data() + s * blk;
      const double* hp = tr.h_prev.data() + s * blk;
      double* dz = az.data() + s * blk;
      double* dr = ar.data() + s * blk;
      double* dc = ac.data() + s * blk;
      for (std::size_t i = 0; i < nn; ++i)
        for (std::size_t j = 0; j < kk; ++j) {
          const std::size_t q = i * kk + j;
          const double gh = dh[q] + g[(i * tt + s) * kk + j];
          dz[q] = gh * (cs[q] - hp[q]) * zs[q] * (1.0 - zs[q]);
          dc[q] = gh * zs[q] * (1.0 - cs[q] * cs[q]);
          next[q] = gh * (1.0 - zs[q]);
        }
      std::fill(drh.begin(), drh.end(), 0.0);
      gemm_rows(dc, uht.data(), drh.data(), nn, kk, kk);
      for (std::size_t q = 0; q < blk; ++q) {
        dr[q] = drh[q] * hp[q] * rs[q] * (1.0 - rs[q]);
        next[q] += drh[q] * rs[q];
      }
      gemm_rows(dz, uzt.data(), next.data(), nn, kk, kk);
      gemm_rows(dr, urt.data(), next.data(), nn, kk, kk);
      std::swap(dh, next);
    }
    const std::size_t rows_all = tt * nn;
    auto weight_grad = [&](std::size_t id, const std::vector<double>& left, std::size_t width,
                           const std::vector<double>& da) {
      if (Tensor3* gw = tp.grad_slot(id)) {
        const std::vector<double> lt = transpose(left.data(), rows_all, width);
        gemm_rows(lt.data(), da.data(), gw->storage().data(), width, rows_all, kk);
      }
    };
    auto bias_grad = [&](std::size_t id, const std::vector<double>& da) {
      if (Tensor3* gb = tp.grad_slot(id)) {
        for (std::size_t r = 0; r < rows_all; ++r)
          for (std::size_t j = 0; j < kk; ++j) (*gb)[j] += da[r * kk + j];
      }
    };
    weight_grad(ids[1], tr.x_tm, ii, az);
    weight_grad(ids[4], tr.x_tm, ii, ar);
    weight_grad(ids[7], tr.x_tm, ii, ac);
    weight_grad(ids[2], tr.h_prev, kk, az);
    weight_grad(ids[5], tr.h_prev, kk, ar);
    weight_grad(ids[8], tr.rh, kk, ac);
    bias_grad(ids[3], az);
    bias_grad(ids[6], ar);
    bias_grad(ids[9], ac);
    if (Tensor3* gx = tp.grad_slot(ids[0])) {
      std::vector<double> dx(rows_all * ii, 0.0);
      const std::vector<double> wzt = transpose(tp.value(ids[1]).storage().data(), ii, kk);
      const std::vector<double> wrt = transpose(tp.value(ids[4]).storage().data(), ii, kk);
      const std::vector<double> wht = transpose(tp.value(ids[7]).storage().data(), ii, kk);
      gemm_rows(az.data(), wzt.data(), dx.data(), rows_all, kk, ii);
      gemm_rows(ar.data(), wrt.data(), dx.data(), rows_all, kk, ii);
      gemm_rows(ac.data(), wht.data(), dx.data(), rows_all, kk, ii);
      for (std::size_t i = 0; i < nn; ++i)
        for (std::size_t s = 0; s < tt; ++s)
          for (std::size_t c = 0; c < ii; ++c) (*gx)[(i * tt + s) * ii + c] += dx[(s * nn + i) * ii + c];
    }
  });
}

Var sum(Var x) {
  Tape& tape = same_tape("sum", {x});
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  const std::size_t xi = x.id();
  const Var ins[] = {x};
  return tape.record(Tensor3(Dims{1, 1, 1}, total), ins, [=](Tape& tp, const Tensor3& g) {
    if (Tensor3* gx = tp.grad_slot(xi)) {
      for (double& v : gx->values()) v += g[0];
    }
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

}  // namespace ops
}  // namespace ghn
