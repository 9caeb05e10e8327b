#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vtfuse {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

// Backward rule for a custom op. `grad_out` is dL/d(output); `grad_in[i]` is
// the accumulation buffer for input i, or empty when that input does not
// require a gradient. Rules must add into grad_in, never assign.
struct BackwardFn {
  std::function<void(std::span<const double> grad_out, std::span<const double> value_out,
                     std::span<const std::span<double>> grad_in)>
      fn;
};

// Dense row-major float64 tensor with an optional recorded gradient graph.
//
// A Tensor is a handle: copies share the same storage and graph node, which is
// what lets an op's output refer back to its inputs. Use clone() or detach()
// for an independent copy. Every op that receives at least one input with
// requires_grad() records a backward rule; the graph lives exactly as long as
// the tensors that reference it.
class Tensor {
 public:
  Tensor() = default;
  // Zero-filled.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  // In-place access for leaves (optimizer updates, finite-difference probes).
  std::span<double> values_mut();
  double at(std::size_t flat_index) const { return values()[flat_index]; }
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  const char* op_name() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();

  // Deep copy that shares nothing and records nothing.
  Tensor clone() const;
  // Same values as a new leaf without requires_grad.
  Tensor detach() const;

  // Reverse-mode sweep from this scalar. Leaf gradients accumulate (+=) across
  // calls, so calling twice without zero_grad() doubles them. Intermediate
  // gradients are recomputed from scratch each call.
  void backward() const;

  // Identity of the underlying node; used for graph bookkeeping in tests.
  const void* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op(std::string_view, Shape, std::vector<double>, std::vector<Tensor>,
                        BackwardFn);
  friend struct GraphAccess;
};

// Creates an op result. Checks the forward values for non-finite entries and
// records `backward` only if some input requires a gradient and grad mode is on.
Tensor make_op(std::string_view name, Shape shape, std::vector<double> values,
               std::vector<Tensor> inputs, BackwardFn backward);

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// Number of distinct op nodes reachable from `root` (leaves excluded).
std::size_t graph_size(const Tensor& root);

// Ops in the order backward() would visit them.
std::vector<std::string> backward_order(const Tensor& root);

}  // namespace vtfuse
