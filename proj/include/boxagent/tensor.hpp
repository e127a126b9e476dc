#pragma once

// Dense 64-bit tensors with a reverse-mode differentiation record.
//
// A Tensor is a cheap handle to an immutable Node. Ops that receive at least
// one input requiring a gradient record their parents and a backward rule in
// the output node; the set of nodes reachable from a loss is the tape for that
// forward pass and is released with the last handle. Parameters are the only
// leaves whose values change, and only between passes (see Adam).

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace boxagent::numerics {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class OpKind {
  leaf,
  add,
  sub,
  mul,
  div,
  neg,
  scale,
  add_scalar,
  maximum,
  minimum,
  matmul,
  matmul_nt,
  transpose,
  softmax,
  log_softmax,
  sigmoid,
  tanh,
  relu,
  exp,
  log,
  abs,
  clamp,
  layer_norm,
  concat,
  slice,
  reshape,
  gather_rows,
  sum,
  mean,
  sum_last,
  custom,
};

const char* op_name(OpKind op);

struct Node {
  OpKind op = OpKind::leaf;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.grad and accumulates into the parents' gradients.
  std::function<void(Node& self)> backward;
  bool requires_grad = false;

  // Lazily sized gradient buffer.
  std::span<double> grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v);

  // Output of a composite op. `backward` may be empty when no input tracks
  // gradients; the caller decides via any_requires_grad().
  static Tensor from_op(OpKind op, Shape shape, std::vector<double> values,
                        std::vector<Tensor> inputs, std::function<void(Node&)> backward);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->value.size(); }
  std::span<const double> values() const { return node_->value; }
  const double* data() const { return node_->value.data(); }
  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  OpKind op() const { return node_->op; }

  // Parameters only; the optimizer writes through this between passes.
  std::span<double> mutable_values();

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

bool any_requires_grad(std::span<const Tensor> inputs);

// Disables recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Gradients of one backward pass, keyed by leaf.
class Gradients {
 public:
  // Exact zeros for leaves the root does not depend on.
  std::vector<double> of(const Tensor& leaf) const;
  bool touched(const Tensor& leaf) const;

 private:
  friend Gradients backward(const Tensor& root);
  std::unordered_map<const Node*, std::vector<double>> by_leaf_;
};

// Root must hold exactly one value.
Gradients backward(const Tensor& root);

// Named, ordered set of trainable leaves.
class ParameterSet {
 public:
  const Tensor& add(const std::string& name, Shape shape, std::vector<double> init);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t size() const { return tensors_.size(); }
  std::size_t scalar_count() const;
  const std::vector<Tensor>& tensors() const { return tensors_; }
  const std::vector<std::string>& names() const { return names_; }
  // Sum of scalar counts over parameters whose name starts with prefix.
  std::size_t scalar_count_with_prefix(const std::string& prefix) const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace boxagent::numerics
