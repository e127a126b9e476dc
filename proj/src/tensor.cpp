#include "boxagent/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace boxagent::numerics {
namespace {

thread_local bool g_grad_enabled = true;

void require_finite(std::span<const double> values, const char* what) {
  // Exponent-bit test first: integer OR reductions vectorize, isfinite loops do not.
  constexpr std::uint64_t kExp = 0x7ff0000000000000ULL;
  std::uint64_t bad = 0;
  for (double v : values) bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(v) & kExp) == kExp);
  if (!bad) return;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream msg;
      msg << what << ": non-finite value " << values[i] << " at flat index " << i;
      throw NumericError(msg.str());
    }
  }
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::neg: return "neg";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::maximum: return "maximum";
    case OpKind::minimum: return "minimum";
    case OpKind::matmul: return "matmul";
    case OpKind::matmul_nt: return "matmul_nt";
    case OpKind::transpose: return "transpose";
    case OpKind::softmax: return "softmax";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::relu: return "relu";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::abs: return "abs";
    case OpKind::clamp: return "clamp";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::reshape: return "reshape";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::sum_last: return "sum_last";
    case OpKind::custom: return "custom";
  }
  return "?";
}

std::span<double> Node::grad_buffer() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size()) {
    throw ShapeError("constant: shape " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  require_finite(values, "constant");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double v) {
  const std::size_t n = numel(shape);
  return constant(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::scalar(double v) { return constant({}, {v}); }

Tensor Tensor::from_op(OpKind op, Shape shape, std::vector<double> values,
                       std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
  if (numel(shape) != values.size()) {
    throw ShapeError(std::string(op_name(op)) + ": result shape " + shape_str(shape) +
                     " does not hold " + std::to_string(values.size()) + " values");
  }
  require_finite(values, op_name(op));
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(values);
  if (g_grad_enabled && any_requires_grad(inputs) && backward) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return node_->shape[axis];
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

std::span<double> Tensor::mutable_values() {
  if (node_->op != OpKind::leaf || !node_->requires_grad) {
    throw std::logic_error("mutable_values: only parameters may be written");
  }
  return node_->value;
}

bool any_requires_grad(std::span<const Tensor> inputs) {
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

std::vector<double> Gradients::of(const Tensor& leaf) const {
  auto it = by_leaf_.find(leaf.node().get());
  if (it == by_leaf_.end()) return std::vector<double>(leaf.size(), 0.0);
  return it->second;
}

bool Gradients::touched(const Tensor& leaf) const { return by_leaf_.count(leaf.node().get()) != 0; }

Gradients backward(const Tensor& root) {
  if (!root.defined() || root.size() != 1) {
    throw ShapeError("backward: root must be a scalar, got " +
                     (root.defined() ? shape_str(root.shape()) : std::string("undefined")));
  }
  Gradients out;
  if (!root.requires_grad()) return out;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->grad.clear();
  root.node()->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->grad.empty()) continue;
    if (n->op == OpKind::leaf) {
      out.by_leaf_[n] = std::move(n->grad);
    } else if (n->backward) {
      n->backward(*n);
    }
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
  return out;
}

const Tensor& ParameterSet::add(const std::string& name, Shape shape, std::vector<double> init) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_[name] = tensors_.size();
  names_.push_back(name);
  tensors_.push_back(Tensor::parameter(std::move(shape), std::move(init)));
  return tensors_.back();
}

const Tensor& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return tensors_[it->second];
}

bool ParameterSet::contains(const std::string& name) const { return index_.count(name) != 0; }

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

std::size_t ParameterSet::scalar_count_with_prefix(const std::string& prefix) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (names_[i].rfind(prefix, 0) == 0) n += tensors_[i].size();
  }
  return n;
}

}  // namespace boxagent::numerics
