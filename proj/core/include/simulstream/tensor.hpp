#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace simulstream {

// Dense 64-bit float tensor with reverse-mode automatic differentiation.
// A Tensor is a cheap shared handle to a graph node; ops in ops.hpp build the
// graph when gradient mode is on and at least one input requires gradients.
//
// Double precision throughout: training runs at desk scale and the test suite
// relies on bit-stable results.

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor();  // empty placeholder; size() == 0

  static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<int64_t> shape, double value, bool requires_grad = false);
  static Tensor from(std::vector<int64_t> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int64_t>& shape() const;
  int64_t size() const;
  int64_t dim(int i) const;  // negative i counts from the back
  bool requires_grad() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();  // leaf mutation (parameters, buffers)
  double value_at(int64_t i) const;
  double scalar_value() const;  // requires size() == 1

  // Gradient buffer; allocated lazily by backward(). Empty span if untouched.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  bool has_grad() const;
  void zero_grad();

  // Reverse-mode sweep from a scalar. Accumulates into existing gradients;
  // call zero_grad() on leaves between steps.
  void backward() const;

  // Same data viewed under a new shape (element count must match).
  Tensor reshaped(std::vector<int64_t> new_shape) const;

  // Value-only copy, detached from any graph.
  Tensor detached() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_tensor(std::shared_ptr<detail::Node> node);
  std::shared_ptr<detail::Node> node_;
};

namespace detail {
struct Node {
  std::vector<int64_t> shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Accumulates d(loss)/d(parent) into parent->grad, reading this->grad.
  std::function<void(Node&)> grad_fn;

  int64_t size() const { return static_cast<int64_t>(values.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
  }
};
}  // namespace detail

// Thread-local gradient mode. Inference paths disable graph construction.
bool grad_mode_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

// Used by ops.cpp to assemble results.
Tensor make_tensor(std::shared_ptr<detail::Node> node);
Tensor make_op_result(std::vector<int64_t> shape, std::vector<double> values,
                      std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> grad_fn);

std::string shape_str(std::span<const int64_t> shape);

// Counter of multiply-accumulate work done by the heavy ops on this thread.
// The policy runner reads it to drive the deterministic compute-cost clock.
uint64_t flop_counter();
void reset_flop_counter();
void add_flops(uint64_t n);

}  // namespace simulstream
