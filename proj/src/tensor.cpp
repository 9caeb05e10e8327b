#include "vtfuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "vtfuse/errors.hpp"

namespace vtfuse {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  bool has_rule() const { return static_cast<bool>(backward.fn); }

  std::span<double> grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

struct GraphAccess {
  static const std::shared_ptr<detail::Node>& node(const Tensor& t) { return t.node_; }
};

namespace {

thread_local bool g_grad_mode = true;

detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw ContractError("operation on an undefined tensor");
  return *node;
}

// Post-order DFS over op nodes, iterative so deep graphs cannot blow the stack.
std::vector<detail::Node*> topo_order(detail::Node* root) {
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  if (!root->has_rule()) return order;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->has_rule() && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  return order;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape) : Tensor(shape, std::vector<double>(shape_numel(shape), 0.0), false) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::size() const { return checked(node_).value.size(); }

std::span<const double> Tensor::values() const { return checked(node_).value; }

std::span<double> Tensor::values_mut() { return checked(node_).value; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw ContractError("requires_grad can only be changed on a leaf");
  node_->requires_grad = on;
}

bool Tensor::is_leaf() const { return !checked(node_).has_rule(); }

const char* Tensor::op_name() const { return checked(node_).op.c_str(); }

bool Tensor::has_grad() const {
  const auto& n = checked(node_);
  return n.grad.size() == n.value.size();
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient; call backward() first");
  return node_->grad;
}

std::span<double> Tensor::grad_mut() { return checked(node_).grad_buffer(); }

void Tensor::zero_grad() {
  auto& n = checked(node_);
  if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  const auto& n = checked(node_);
  return Tensor(n.shape, n.value, n.requires_grad && !n.has_rule());
}

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  return Tensor(n.shape, n.value, false);
}

void Tensor::backward() const {
  detail::Node& root = checked(node_);
  if (root.value.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) throw ContractError("backward() on a tensor that does not require grad");

  std::vector<detail::Node*> order = topo_order(&root);
  for (detail::Node* node : order) node->grad.assign(node->value.size(), 0.0);
  root.grad_buffer()[0] += 1.0;

  std::vector<std::span<double>> sinks;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    sinks.clear();
    for (const auto& input : node->inputs) {
      sinks.push_back(input->requires_grad ? input->grad_buffer() : std::span<double>{});
    }
    node->backward.fn(node->grad, node->value, sinks);
  }
}

Tensor make_op(std::string_view name, Shape shape, std::vector<double> values,
               std::vector<Tensor> inputs, BackwardFn backward) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by " + std::string(name));
  }
  Tensor out(std::move(shape), std::move(values), false);
  bool needs_grad = false;
  if (g_grad_mode) {
    for (const Tensor& in : inputs) needs_grad = needs_grad || checked(in.node_).requires_grad;
  }
  if (needs_grad) {
    auto& node = *out.node_;
    node.requires_grad = true;
    node.op = std::string(name);
    node.backward = std::move(backward);
    node.inputs.reserve(inputs.size());
    for (Tensor& in : inputs) node.inputs.push_back(std::move(in.node_));
  }
  return out;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

bool grad_mode_enabled() { return g_grad_mode; }

std::size_t graph_size(const Tensor& root) {
  return topo_order(&checked(GraphAccess::node(root))).size();
}

std::vector<std::string> backward_order(const Tensor& root) {
  auto order = topo_order(&checked(GraphAccess::node(root)));
  std::vector<std::string> names;
  for (auto it = order.rbegin(); it != order.rend(); ++it) names.push_back((*it)->op);
  return names;
}

}  // namespace vtfuse
