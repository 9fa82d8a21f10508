#include "uptb/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <sstream>

#include "uptb/fft.hpp"

namespace uptb {

namespace {

using Buffer = std::vector<double>;
using BufferPtr = std::shared_ptr<const Buffer>;

void check_shape(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) {
      throw ShapeError("tensor extents must be positive, got " +
                       shape_str(shape));
    }
  }
}

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a,
                                 const Tensor& b) {
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                   " and " + shape_str(b.shape()) + " do not conform");
}

void require_axis(const char* op, const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(x.shape()));
  }
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Tensor finish(Tensor result, std::initializer_list<Tensor> inputs,
              const char* op, BackwardFn fn) {
  std::vector<Tensor> in(inputs);
  Tape* tape = common_tape(op, in);
  if (tape == nullptr) return result;
  return tape->record(std::move(result), in, std::move(fn));
}

template <class Forward, class Derivative>
Tensor unary(const char* op, const Tensor& x, Forward f, Derivative df) {
  const std::size_t n = x.size();
  auto out = std::make_shared<Buffer>(n);
  const auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) (*out)[i] = f(xv[i]);
  Tensor result(x.shape(), out);
  if (!x.on_tape()) return result;
  const int ix = x.node();
  BufferPtr xb = x.buffer();
  BufferPtr yb = out;
  return finish(std::move(result), {x}, op,
                [ix, xb, yb, df](std::span<const double> g, GradientBuffer& gb) {
                  auto gx = gb.at(ix);
                  const Buffer& xs = *xb;
                  const Buffer& ys = *yb;
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] += g[i] * df(xs[i], ys[i]);
                  }
                });
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : data_(std::make_shared<Buffer>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : Tensor(std::move(shape), std::make_shared<Buffer>(std::move(values))) {}

Tensor::Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_size(shape_) != data_->size()) {
    throw ShapeError("shape " + shape_str(shape_) + " needs " +
                     std::to_string(shape_size(shape_)) + " values, got " +
                     std::to_string(data_->size()));
  }
}

Tensor Tensor::scalar(double v) { return Tensor({}, Buffer{v}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double v) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), Buffer(n, v));
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw ShapeError("at(row, col) needs a matrix");
  return (*data_)[row * shape_[1] + col];
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item() on non-scalar shape " + shape_str(shape_));
  }
  return (*data_)[0];
}

Tensor Tensor::detached() const { return Tensor(shape_, data_); }

// ---------------------------------------------------------------------------
// Tape

GradientBuffer::GradientBuffer(std::vector<std::size_t> sizes)
    : sizes_(std::move(sizes)), grads_(sizes_.size()) {}

std::span<double> GradientBuffer::at(int node) {
  auto& g = grads_[static_cast<std::size_t>(node)];
  if (g.empty()) g.assign(sizes_[static_cast<std::size_t>(node)], 0.0);
  return g;
}

Tensor Gradients::of(const Tensor& variable) const {
  if (variable.tape() != tape_ || variable.node() < 0) {
    throw ContractError("gradient requested for a tensor of another tape");
  }
  const auto id = static_cast<std::size_t>(variable.node());
  if (grads_[id].empty()) return Tensor::zeros(variable.shape());
  return Tensor(shapes_[id], grads_[id]);
}

Tensor Tape::variable(const Tensor& value) {
  Tensor t(value.shape(), value.buffer());
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{value.shape(), {}, nullptr, true});
  return t;
}

Tensor Tape::record(Tensor value, std::span<const Tensor> inputs,
                    BackwardFn fn) {
  Node node{value.shape(), {}, std::move(fn), false};
  for (const Tensor& in : inputs) {
    if (in.tape() == this) node.inputs.push_back(in.node());
  }
  value.tape_ = this;
  value.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(node));
  return value;
}

Gradients Tape::backward(const Tensor& loss) const {
  if (loss.tape() != this) {
    throw ContractError("backward: loss is not on this tape");
  }
  if (!loss.is_scalar()) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        shape_str(loss.shape()));
  }
  std::vector<std::size_t> sizes(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    sizes[i] = shape_size(nodes_[i].shape);
  }
  GradientBuffer buf(std::move(sizes));
  buf.at(loss.node())[0] = 1.0;
  for (int i = loss.node(); i >= 0; --i) {
    if (!buf.has(i)) continue;
    const Node& node = nodes_[static_cast<std::size_t>(i)];
    if (node.backward) {
      std::span<const double> g = buf.at(i);
      node.backward(g, buf);
    }
    if (!node.variable) buf.release(i);
  }
  Gradients out;
  out.tape_ = this;
  out.shapes_.resize(nodes_.size());
  out.grads_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].variable) continue;
    out.shapes_[i] = nodes_[i].shape;
    if (buf.has(static_cast<int>(i))) out.grads_[i] = buf.take(static_cast<int>(i));
  }
  return out;
}

Tape* common_tape(const char* op, std::span<const Tensor> inputs) {
  Tape* tape = nullptr;
  for (const Tensor& t : inputs) {
    if (!t.on_tape()) continue;
    if (tape != nullptr && tape != t.tape()) {
      throw ContractError(std::string(op) + ": inputs live on different tapes");
    }
    tape = t.tape();
  }
  return tape;
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch("add", a, b);
  auto out = std::make_shared<Buffer>(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) (*out)[i] = av[i] + bv[i];
  const int ia = a.on_tape() ? a.node() : -1;
  const int ib = b.on_tape() ? b.node() : -1;
  return finish(Tensor(a.shape(), out), {a, b}, "add",
                [ia, ib](std::span<const double> g, GradientBuffer& gb) {
                  if (ia >= 0) {
                    auto ga = gb.at(ia);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                  if (ib >= 0) {
                    auto gbv = gb.at(ib);
                    for (std::size_t i = 0; i < g.size(); ++i) gbv[i] += g[i];
                  }
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch("sub", a, b);
  auto out = std::make_shared<Buffer>(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) (*out)[i] = av[i] - bv[i];
  const int ia = a.on_tape() ? a.node() : -1;
  const int ib = b.on_tape() ? b.node() : -1;
  return finish(Tensor(a.shape(), out), {a, b}, "sub",
                [ia, ib](std::span<const double> g, GradientBuffer& gb) {
                  if (ia >= 0) {
                    auto ga = gb.at(ia);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                  if (ib >= 0) {
                    auto gbv = gb.at(ib);
                    for (std::size_t i = 0; i < g.size(); ++i) gbv[i] -= g[i];
                  }
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch("mul", a, b);
  auto out = std::make_shared<Buffer>(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) (*out)[i] = av[i] * bv[i];
  const int ia = a.on_tape() ? a.node() : -1;
  const int ib = b.on_tape() ? b.node() : -1;
  BufferPtr ab = a.buffer();
  BufferPtr bb = b.buffer();
  return finish(Tensor(a.shape(), out), {a, b}, "mul",
                [ia, ib, ab, bb](std::span<const double> g, GradientBuffer& gb) {
                  if (ia >= 0) {
                    auto ga = gb.at(ia);
                    const Buffer& bs = *bb;
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bs[i];
                  }
                  if (ib >= 0) {
                    auto gbv = gb.at(ib);
                    const Buffer& as = *ab;
                    for (std::size_t i = 0; i < g.size(); ++i) gbv[i] += g[i] * as[i];
                  }
                });
}

Tensor scalar_mul(const Tensor& x, double c) {
  auto out = std::make_shared<Buffer>(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) (*out)[i] = c * xv[i];
  const int ix = x.node();
  return finish(Tensor(x.shape(), out), {x}, "scalar-mul",
                [ix, c](std::span<const double> g, GradientBuffer& gb) {
                  auto gx = gb.at(ix);
                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
                });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.values()) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw DomainError("log: argument " + std::to_string(v) +
                        " outside (0, inf)");
    }
  }
  return unary(
      "log", x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_mismatch("matmul", a, b);
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = std::make_shared<Buffer>(m * n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  double* ov = out->data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = ov + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  const int ia = a.on_tape() ? a.node() : -1;
  const int ib = b.on_tape() ? b.node() : -1;
  BufferPtr ab = a.buffer();
  BufferPtr bb = b.buffer();
  return finish(
      Tensor({m, n}, out), {a, b}, "matmul",
      [ia, ib, ab, bb, m, k, n](std::span<const double> g, GradientBuffer& gb) {
        if (ia >= 0) {
          auto ga = gb.at(ia);
          const double* bvp = bb->data();
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g.data() + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const double* brow = bvp + p * n;
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              ga[i * k + p] += acc;
            }
          }
        }
        if (ib >= 0) {
          auto gbv = gb.at(ib);
          const double* avp = ab->data();
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g.data() + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = avp[i * k + p];
              if (aip == 0.0) continue;
              double* gbrow = gbv.data() + p * n;
              for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
            }
          }
        }
      });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) {
    throw ShapeError("transpose: expected a matrix, got " + shape_str(x.shape()));
  }
  const std::size_t r = x.dim(0), c = x.dim(1);
  auto out = std::make_shared<Buffer>(r * c);
  const auto xv = x.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) (*out)[j * r + i] = xv[i * c + j];
  }
  const int ix = x.node();
  return finish(Tensor({c, r}, out), {x}, "transpose",
                [ix, r, c](std::span<const double> g, GradientBuffer& gb) {
                  auto gx = gb.at(ix);
                  for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
                  }
                });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  const int ix = x.node();
  return finish(Tensor(std::move(shape), x.buffer()), {x}, "reshape",
                [ix](std::span<const double> g, GradientBuffer& gb) {
                  auto gx = gb.at(ix);
                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Tensor& first = parts[0];
  require_axis("concat", first, axis);
  Shape out_shape = first.shape();
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.rank()) shape_mismatch("concat", first, p);
    for (std::size_t d = 0; d < p.rank(); ++d) {
      if (d != axis && p.dim(d) != first.dim(d)) shape_mismatch("concat", first, p);
    }
    out_shape[axis] += p.dim(axis);
  }
  const AxisSplit os = split_axis(out_shape, axis);
  auto out = std::make_shared<Buffer>(shape_size(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.dim(axis) * os.inner;
    const auto pv = p.values();
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy_n(pv.data() + o * chunk, chunk,
                  out->data() + o * os.extent * os.inner + offset * os.inner);
    }
    offset += p.dim(axis);
  }
  Tensor result(out_shape, out);
  Tape* tape = common_tape("concat", parts);
  if (tape == nullptr) return result;
  std::vector<int> ids;
  std::vector<std::size_t> extents;
  for (const Tensor& p : parts) {
    ids.push_back(p.tape() == tape ? p.node() : -1);
    extents.push_back(p.dim(axis));
  }
  return tape->record(
      std::move(result), parts,
      [ids, extents, offsets, os](std::span<const double> g, GradientBuffer& gb) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (ids[k] < 0) continue;
          auto gp = gb.at(ids[k]);
          const std::size_t chunk = extents[k] * os.inner;
          for (std::size_t o = 0; o < os.outer; ++o) {
            const double* src =
                g.data() + o * os.extent * os.inner + offsets[k] * os.inner;
            double* dst = gp.data() + o * chunk;
            for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
          }
        }
      });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end) {
  require_axis("slice", x, axis);
  if (begin >= end || end > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const AxisSplit s = split_axis(x.shape(), axis);
  const std::size_t len = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  auto out = std::make_shared<Buffer>(shape_size(out_shape));
  const auto xv = x.values();
  const std::size_t chunk = len * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.data() + o * s.extent * s.inner + begin * s.inner, chunk,
                out->data() + o * chunk);
  }
  const int ix = x.node();
  return finish(Tensor(out_shape, out), {x}, "slice",
                [ix, s, begin, chunk](std::span<const double> g, GradientBuffer& gb) {
                  auto gx = gb.at(ix);
                  for (std::size_t o = 0; o < s.outer; ++o) {
                    double* dst = gx.data() + o * s.extent * s.inner + begin * s.inner;
                    const double* src = g.data() + o * chunk;
                    for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                  }
                });
}

Tensor pad_zeros(const Tensor& x, std::size_t axis, std::size_t before,
                 std::size_t after) {
  require_axis("pad-zeros", x, axis);
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] += before + after;
  const std::size_t out_extent = out_shape[axis];
  auto out = std::make_shared<Buffer>(shape_size(out_shape), 0.0);
  const auto xv = x.values();
  const std::size_t chunk = s.extent * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.data() + o * chunk, chunk,
                out->data() + o * out_extent * s.inner + before * s.inner);
  }
  const int ix = x.node();
  return finish(
      Tensor(out_shape, out), {x}, "pad-zeros",
      [ix, s, before, out_extent, chunk](std::span<const double> g,
                                         GradientBuffer& gb) {
        auto gx = gb.at(ix);
        for (std::size_t o = 0; o < s.outer; ++o) {
          const double* src = g.data() + o * out_extent * s.inner + before * s.inner;
          double* dst = gx.data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      });
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  const Shape& inner_shape = parts[0].shape();
  for (const Tensor& p : parts) {
    if (p.shape() != inner_shape) shape_mismatch("stack", parts[0], p);
  }
  const std::size_t chunk = parts[0].size();
  Shape out_shape;
  out_shape.push_back(parts.size());
  out_shape.insert(out_shape.end(), inner_shape.begin(), inner_shape.end());
  auto out = std::make_shared<Buffer>(chunk * parts.size());
  for (std::size_t k = 0; k < parts.size(); ++k) {
    std::copy_n(parts[k].values().data(), chunk, out->data() + k * chunk);
  }
  Tensor result(out_shape, out);
  Tape* tape = common_tape("stack", parts);
  if (tape == nullptr) return result;
  std::vector<int> ids;
  for (const Tensor& p : parts) ids.push_back(p.tape() == tape ? p.node() : -1);
  return tape->record(std::move(result), parts,
                      [ids, chunk](std::span<const double> g, GradientBuffer& gb) {
                        for (std::size_t k = 0; k < ids.size(); ++k) {
                          if (ids[k] < 0) continue;
                          auto gp = gb.at(ids[k]);
                          const double* src = g.data() + k * chunk;
                          for (std::size_t i = 0; i < chunk; ++i) gp[i] += src[i];
                        }
                      });
}

Tensor gather(const Tensor& x, std::span<const std::size_t> indices) {
  if (x.rank() == 0) throw ShapeError("gather: needs rank >= 1");
  if (indices.empty()) throw ShapeError("gather: empty index list");
  const std::size_t rows = x.dim(0);
  const std::size_t chunk = x.size() / rows;
  for (std::size_t idx : indices) {
    if (idx >= rows) {
      throw ShapeError("gather: index " + std::to_string(idx) +
                       " out of range for shape " + shape_str(x.shape()));
    }
  }
  Shape out_shape = x.shape();
  out_shape[0] = indices.size();
  auto out = std::make_shared<Buffer>(indices.size() * chunk);
  const auto xv = x.values();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    std::copy_n(xv.data() + indices[k] * chunk, chunk, out->data() + k * chunk);
  }
  const int ix = x.node();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return finish(Tensor(out_shape, out), {x}, "gather",
                [ix, idx, chunk](std::span<const double> g, GradientBuffer& gb) {
                  auto gx = gb.at(ix);
                  for (std::size_t k = 0; k < idx.size(); ++k) {
                    double* dst = gx.data() + idx[k] * chunk;
                    const double* src = g.data() + k * chunk;
                    for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                  }
                });
}

// ---------------------------------------------------------------------------
// Reductions and normalisations

Tensor reduce_sum(const Tensor& x, std::size_t axis) {
  require_axis("reduce-sum", x, axis);
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  auto out = std::make_shared<Buffer>(s.outer * s.inner, 0.0);
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      const double* src = xv.data() + (o * s.extent + e) * s.inner;
      double* dst = out->data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  const int ix = x.node();
  return finish(Tensor(out_shape, out), {x}, "reduce-sum",
                [ix, s](std::span<const double> g, GradientBuffer& gb) {
                  auto gx = gb.at(ix);
                  for (std::size_t o = 0; o < s.outer; ++o) {
                    for (std::size_t e = 0; e < s.extent; ++e) {
                      double* dst = gx.data() + (o * s.extent + e) * s.inner;
                      const double* src = g.data() + o * s.inner;
                      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
                    }
                  }
                });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  const int ix = x.node();
  return finish(Tensor::scalar(total), {x}, "reduce-sum",
                [ix](std::span<const double> g, GradientBuffer& gb) {
                  auto gx = gb.at(ix);
                  for (double& v : gx) v += g[0];
                });
}

Tensor reduce_max(const Tensor& x, std::size_t axis) {
  require_axis("reduce-max", x, axis);
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  auto out = std::make_shared<Buffer>(s.outer * s.inner);
  std::vector<std::size_t> argmax(s.outer * s.inner);
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = o * s.extent * s.inner + i;
      for (std::size_t e = 1; e < s.extent; ++e) {
        const std::size_t at = (o * s.extent + e) * s.inner + i;
        if (xv[at] > xv[best]) best = at;
      }
      (*out)[o * s.inner + i] = xv[best];
      argmax[o * s.inner + i] = best;
    }
  }
  const int ix = x.node();
  return finish(Tensor(out_shape, out), {x}, "reduce-max",
                [ix, argmax](std::span<const double> g, GradientBuffer& gb) {
                  auto gx = gb.at(ix);
                  for (std::size_t k = 0; k < argmax.size(); ++k) gx[argmax[k]] += g[k];
                });
}

namespace {

// Computes softmax (and optionally its log) along an axis with max
// subtraction. Returns false on non-finite input.
bool softmax_forward(const Tensor& x, const AxisSplit& s, Buffer& probs,
                     Buffer* logs) {
  const auto xv = x.values();
  for (double v : xv) {
    if (!std::isfinite(v)) return false;
  }
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = xv[base];
      for (std::size_t e = 1; e < s.extent; ++e) {
        mx = std::max(mx, xv[base + e * s.inner]);
      }
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double ev = std::exp(xv[base + e * s.inner] - mx);
        probs[base + e * s.inner] = ev;
        z += ev;
      }
      const double log_z = std::log(z);
      for (std::size_t e = 0; e < s.extent; ++e) {
        const std::size_t at = base + e * s.inner;
        probs[at] /= z;
        if (logs != nullptr) (*logs)[at] = xv[at] - mx - log_z;
      }
    }
  }
  return true;
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_axis("softmax", x, axis);
  const AxisSplit s = split_axis(x.shape(), axis);
  auto out = std::make_shared<Buffer>(x.size());
  if (!softmax_forward(x, s, *out, nullptr)) {
    throw DomainError("softmax: non-finite input");
  }
  const int ix = x.node();
  BufferPtr yb = out;
  return finish(Tensor(x.shape(), out), {x}, "softmax",
                [ix, s, yb](std::span<const double> g, GradientBuffer& gb) {
                  auto gx = gb.at(ix);
                  const Buffer& y = *yb;
                  for (std::size_t o = 0; o < s.outer; ++o) {
                    for (std::size_t i = 0; i < s.inner; ++i) {
                      const std::size_t base = o * s.extent * s.inner + i;
                      double dot = 0.0;
                      for (std::size_t e = 0; e < s.extent; ++e) {
                        dot += g[base + e * s.inner] * y[base + e * s.inner];
                      }
                      for (std::size_t e = 0; e < s.extent; ++e) {
                        const std::size_t at = base + e * s.inner;
                        gx[at] += y[at] * (g[at] - dot);
                      }
                    }
                  }
                });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  require_axis("log-softmax", x, axis);
  const AxisSplit s = split_axis(x.shape(), axis);
  auto probs = std::make_shared<Buffer>(x.size());
  auto out = std::make_shared<Buffer>(x.size());
  if (!softmax_forward(x, s, *probs, out.get())) {
    throw DomainError("log-softmax: non-finite input");
  }
  const int ix = x.node();
  BufferPtr pb = probs;
  return finish(Tensor(x.shape(), out), {x}, "log-softmax",
                [ix, s, pb](std::span<const double> g, GradientBuffer& gb) {
                  auto gx = gb.at(ix);
                  const Buffer& p = *pb;
                  for (std::size_t o = 0; o < s.outer; ++o) {
                    for (std::size_t i = 0; i < s.inner; ++i) {
                      const std::size_t base = o * s.extent * s.inner + i;
                      double total = 0.0;
                      for (std::size_t e = 0; e < s.extent; ++e) {
                        total += g[base + e * s.inner];
                      }
                      for (std::size_t e = 0; e < s.extent; ++e) {
                        const std::size_t at = base + e * s.inner;
                        gx[at] += g[at] - p[at] * total;
                      }
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// Spectrum

Tensor power_spectrum(const Tensor& frames) {
  if (frames.rank() != 2 || !is_power_of_two(frames.dim(1))) {
    throw ShapeError("power-spectrum: expected F x N with N a power of two, got " +
                     shape_str(frames.shape()));
  }
  const std::size_t f = frames.dim(0), n = frames.dim(1), bins = n / 2 + 1;
  const FftPlan& plan = fft_plan(n);
  auto out = std::make_shared<Buffer>(f * bins);
  auto spectra =
      std::make_shared<std::vector<std::complex<double>>>(f * bins);
  std::vector<std::complex<double>> work(n);
  const auto xv = frames.values();
  for (std::size_t r = 0; r < f; ++r) {
    for (std::size_t i = 0; i < n; ++i) work[i] = {xv[r * n + i], 0.0};
    plan.transform(work, false);
    for (std::size_t k = 0; k < bins; ++k) {
      (*spectra)[r * bins + k] = work[k];
      (*out)[r * bins + k] = std::norm(work[k]);
    }
  }
  const int ix = frames.node();
  if (!frames.on_tape()) return Tensor({f, bins}, out);
  return finish(
      Tensor({f, bins}, out), {frames}, "power-spectrum",
      [ix, spectra, f, n, bins](std::span<const double> g, GradientBuffer& gb) {
        // d|X_k|^2/dx_j = 2 Re(X_k e^{+i 2 pi k j / n}); summed over the
        // half spectrum this is an unnormalised inverse transform.
        auto gx = gb.at(ix);
        const FftPlan& p = fft_plan(n);
        std::vector<std::complex<double>> w(n);
        for (std::size_t r = 0; r < f; ++r) {
          std::fill(w.begin(), w.end(), std::complex<double>{});
          for (std::size_t k = 0; k < bins; ++k) {
            w[k] = 2.0 * g[r * bins + k] * (*spectra)[r * bins + k];
          }
          p.transform(w, true);
          for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += w[j].real();
        }
      });
}

// ---------------------------------------------------------------------------
// Dispatcher

const char* primitive_name(Primitive kind) {
  switch (kind) {
    case Primitive::kAdd: return "add";
    case Primitive::kSub: return "sub";
    case Primitive::kMul: return "elementwise-mul";
    case Primitive::kScalarMul: return "scalar-mul";
    case Primitive::kMatmul: return "matmul";
    case Primitive::kTranspose: return "transpose";
    case Primitive::kReshape: return "reshape";
    case Primitive::kConcat: return "concat";
    case Primitive::kSlice: return "slice";
    case Primitive::kPadZeros: return "pad-zeros";
    case Primitive::kStack: return "stack";
    case Primitive::kTanh: return "tanh";
    case Primitive::kSigmoid: return "sigmoid";
    case Primitive::kRelu: return "relu";
    case Primitive::kExp: return "exp";
    case Primitive::kLog: return "log";
    case Primitive::kSquare: return "square";
    case Primitive::kReduceSum: return "reduce-sum";
    case Primitive::kReduceMax: return "reduce-max";
    case Primitive::kSoftmax: return "softmax";
    case Primitive::kLogSoftmax: return "log-softmax";
    case Primitive::kGather: return "gather";
    case Primitive::kPowerSpectrum: return "power-spectrum";
  }
  return "unknown";
}

Tensor apply_primitive(Primitive kind, std::span<const Tensor> inputs,
                       const PrimitiveArgs& args) {
  auto arity = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw ShapeError(std::string(primitive_name(kind)) + ": expected " +
                       std::to_string(n) + " inputs, got " +
                       std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case Primitive::kAdd: arity(2); return add(inputs[0], inputs[1]);
    case Primitive::kSub: arity(2); return sub(inputs[0], inputs[1]);
    case Primitive::kMul: arity(2); return mul(inputs[0], inputs[1]);
    case Primitive::kScalarMul: arity(1); return scalar_mul(inputs[0], args.scalar);
    case Primitive::kMatmul: arity(2); return matmul(inputs[0], inputs[1]);
    case Primitive::kTranspose: arity(1); return transpose(inputs[0]);
    case Primitive::kReshape: arity(1); return reshape(inputs[0], args.shape);
    case Primitive::kConcat: return concat(inputs, args.axis);
    case Primitive::kSlice:
      arity(1);
      return slice(inputs[0], args.axis, args.begin, args.end);
    case Primitive::kPadZeros:
      arity(1);
      return pad_zeros(inputs[0], args.axis, args.pad_before, args.pad_after);
    case Primitive::kStack: return stack(inputs);
    case Primitive::kTanh: arity(1); return tanh(inputs[0]);
    case Primitive::kSigmoid: arity(1); return sigmoid(inputs[0]);
    case Primitive::kRelu: arity(1); return relu(inputs[0]);
    case Primitive::kExp: arity(1); return exp(inputs[0]);
    case Primitive::kLog: arity(1); return log(inputs[0]);
    case Primitive::kSquare: arity(1); return square(inputs[0]);
    case Primitive::kReduceSum: arity(1); return reduce_sum(inputs[0], args.axis);
    case Primitive::kReduceMax: arity(1); return reduce_max(inputs[0], args.axis);
    case Primitive::kSoftmax: arity(1); return softmax(inputs[0], args.axis);
    case Primitive::kLogSoftmax: arity(1); return log_softmax(inputs[0], args.axis);
    case Primitive::kGather: arity(1); return gather(inputs[0], args.indices);
    case Primitive::kPowerSpectrum: arity(1); return power_spectrum(inputs[0]);
  }
  throw ContractError("apply_primitive: unknown kind");
}

// ---------------------------------------------------------------------------
// Finite differences

std::vector<double> finite_difference_errors(const ScalarFunction& f,
                                             const Tensor& point, double step) {
  if (!(step > 0.0)) throw ContractError("finite difference step must be > 0");
  Tape tape;
  const Tensor x = tape.variable(point);
  const Tensor y = f(x);
  if (!y.is_scalar()) {
    throw ContractError("finite_difference_check: function must return a scalar");
  }
  if (!std::isfinite(y.item())) {
    throw DomainError("finite_difference_check: non-finite value at point");
  }
  const Tensor analytic = y.on_tape() ? tape.backward(y).of(x)
                                      : Tensor::zeros(point.shape());
  std::vector<double> errors(point.size());
  std::vector<double> probe(point.values().begin(), point.values().end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double fp = f(Tensor(point.shape(), probe)).item();
    probe[i] = saved - step;
    const double fm = f(Tensor(point.shape(), probe)).item();
    probe[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw DomainError("finite_difference_check: non-finite value at probe " +
                        std::to_string(i));
    }
    const double numeric = (fp - fm) / (2.0 * step);
    errors[i] = std::abs(analytic[i] - numeric) /
                std::max(1.0, std::abs(analytic[i]));
  }
  return errors;
}

double finite_difference_check(const ScalarFunction& f, const Tensor& point,
                               double step) {
  const auto errors = finite_difference_errors(f, point, step);
  double worst = 0.0;
  for (double e : errors) worst = std::max(worst, e);
  return worst;
}

}  // namespace uptb
