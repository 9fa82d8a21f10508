#pragma once

// Dense double-precision tensors with define-by-run reverse-mode
// differentiation. A Tensor is an immutable value (shape + shared buffer)
// that optionally refers to a node on a Tape. Operations whose inputs sit on
// a tape are recorded there; operations on constants are plain arithmetic.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "uptb/errors.hpp"

namespace uptb {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Tape;

class Tensor {
 public:
  // Rank-0 zero.
  Tensor();
  Tensor(Shape shape, std::vector<double> values);
  Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_->size(); }
  bool is_scalar() const { return shape_.empty(); }

  std::span<const double> values() const { return *data_; }
  const std::shared_ptr<const std::vector<double>>& buffer() const {
    return data_;
  }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t row, std::size_t col) const;
  double item() const;

  bool on_tape() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  // Same values and shape, detached from any tape.
  Tensor detached() const;

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

// Scratch gradient storage used during one backward sweep.
class GradientBuffer {
 public:
  explicit GradientBuffer(std::vector<std::size_t> sizes);

  // Zero-initialised on first access. Negative ids (constants) are invalid.
  std::span<double> at(int node);
  bool has(int node) const { return !grads_[node].empty(); }
  std::vector<double> take(int node) { return std::move(grads_[node]); }
  void release(int node) { std::vector<double>().swap(grads_[node]); }

 private:
  std::vector<std::size_t> sizes_;
  std::vector<std::vector<double>> grads_;
};

// Receives d(loss)/d(output) and accumulates into the inputs' gradients.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, GradientBuffer& grads)>;

class Gradients {
 public:
  Gradients() = default;
  // Gradient with respect to a variable of the tape; zeros when the loss
  // does not depend on it.
  Tensor of(const Tensor& variable) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<Shape> shapes_;
  std::vector<std::vector<double>> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a differentiable leaf holding a copy of `value`.
  Tensor variable(const Tensor& value);

  // Records an operation. `inputs` are the participating tensors (those not
  // on this tape are treated as constants). Returns `value` bound to the new
  // node.
  Tensor record(Tensor value, std::span<const Tensor> inputs, BackwardFn fn);

  // Reverse sweep from a rank-0 loss. Does not mutate the tape, so repeated
  // calls produce identical results.
  Gradients backward(const Tensor& loss) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    std::vector<int> inputs;
    BackwardFn backward;
    bool variable = false;
  };
  std::vector<Node> nodes_;
};

// Returns the tape shared by the taped inputs (nullptr when all are
// constants). Mixing tapes is a contract error.
Tape* common_tape(const char* op, std::span<const Tensor> inputs);

// ---------------------------------------------------------------------------
// Primitives. Shapes must match exactly; the only broadcasting is scalar_mul.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& x, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end);
Tensor pad_zeros(const Tensor& x, std::size_t axis, std::size_t before,
                 std::size_t after);
Tensor stack(std::span<const Tensor> parts);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
Tensor reduce_sum(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);
Tensor reduce_max(const Tensor& x, std::size_t axis);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
// Selects slices along axis 0.
Tensor gather(const Tensor& x, std::span<const std::size_t> indices);
// Row-wise power spectrum |rfft(row)|^2 of an F x N matrix, N a power of
// two. Output is F x (N/2 + 1).
Tensor power_spectrum(const Tensor& frames);

enum class Primitive {
  kAdd,
  kSub,
  kMul,
  kScalarMul,
  kMatmul,
  kTranspose,
  kReshape,
  kConcat,
  kSlice,
  kPadZeros,
  kStack,
  kTanh,
  kSigmoid,
  kRelu,
  kExp,
  kLog,
  kSquare,
  kReduceSum,
  kReduceMax,
  kSoftmax,
  kLogSoftmax,
  kGather,
  kPowerSpectrum,
};

const char* primitive_name(Primitive kind);

struct PrimitiveArgs {
  std::size_t axis = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t pad_before = 0;
  std::size_t pad_after = 0;
  double scalar = 1.0;
  Shape shape;
  std::vector<std::size_t> indices;
};

// Uniform entry point over every primitive, used by generic tests and tools.
Tensor apply_primitive(Primitive kind, std::span<const Tensor> inputs,
                       const PrimitiveArgs& args = {});

// ---------------------------------------------------------------------------
// Finite-difference oracle.

using ScalarFunction = std::function<Tensor(const Tensor&)>;

// Per-coordinate |analytic - central difference| / max(1, |analytic|).
std::vector<double> finite_difference_errors(const ScalarFunction& f,
                                             const Tensor& point, double step);

// Maximum of finite_difference_errors.
double finite_difference_check(const ScalarFunction& f, const Tensor& point,
                               double step);

}  // namespace uptb
