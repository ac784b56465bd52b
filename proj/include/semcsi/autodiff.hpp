#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double tensors. A Tape records every op in execution order; backward()
// walks it once in reverse.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace semcsi::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const& { return data_; }
  std::span<double> data() & { return data_; }
  std::span<const double> data() && = delete;
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Value of a single-element tensor.
  double item() const;

  /// Same data, new shape of equal size.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the node's own output and its gradient; accumulates into input
  // gradients through Tape::accumulate / grad_buffer.
  using BackwardFn = std::function<void(Tape&, const Tensor& out, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf that receives a gradient.
  Var variable(Tensor value);

  /// Records an op result. Throws NumericError on non-finite output.
  Var record(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient of the last backward() loss w.r.t. v; zeros when unreachable.
  Tensor grad(Var v) const;

  /// Reverse sweep from a single-element loss. Throws ContractError otherwise.
  void backward(Var loss);

  void accumulate(std::size_t id, std::span<const double> g);
  /// Mutable gradient buffer of node `id` (allocated zeroed on first use).
  std::vector<double>& grad_buffer(std::size_t id);

  std::size_t size() const { return nodes_.size(); }
  const char* op_name(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

 private:
  struct Node {
    const char* op;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::vector<double> grad;
  };
  std::vector<Node> nodes_;
};

// ---- ops -------------------------------------------------------------------
// Binary elementwise ops accept equal shapes, a right operand whose shape is a
// suffix of the left shape (broadcast over leading dims), or a one-element
// right operand.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var gelu(Var a);
Var tanh(Var a);
Var square(Var a);
/// x^(-1/2), elementwise; inputs must be positive.
Var rsqrt(Var a);

/// a[..., m, k] x b[k, n] (shared weight) or a[..., m, k] x b[..., k, n]
/// (matching batch dims). With transpose_b, b is read as [..., n, k].
Var matmul(Var a, Var b, bool transpose_b = false);

Var softmax(Var a);
Var layernorm(Var a, Var gain, Var bias, double eps = 1e-5);

Var reshape(Var a, Shape shape);
/// Generalized transpose: output axis i is input axis perm[i].
Var permute(Var a, const std::vector<std::size_t>& perm);

Var sum(Var a);
Var mean(Var a);

/// Forward value of `hard` (a constant), gradient routed to `soft`.
Var straight_through(Var soft, const Tensor& hard);

// Plain-value helpers shared with tests and the model.
double gelu_value(double x);
double gelu_derivative(double x);

}  // namespace semcsi::ad
