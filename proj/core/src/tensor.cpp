#include "simulstream/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace simulstream {

namespace {
thread_local bool g_grad_mode = true;
thread_local uint64_t g_flops = 0;

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}
}  // namespace

bool grad_mode_enabled() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : saved_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = saved_; }

uint64_t flop_counter() { return g_flops; }
void reset_flop_counter() { g_flops = 0; }
void add_flops(uint64_t n) { g_flops += n; }

std::string shape_str(std::span<const int64_t> shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor() = default;

Tensor Tensor::zeros(std::vector<int64_t> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int64_t> shape, double value, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  int64_t n = shape_numel(shape);
  node->shape = std::move(shape);
  node->values.assign(static_cast<size_t>(n), value);
  node->requires_grad = requires_grad;
  return make_tensor(std::move(node));
}

Tensor Tensor::from(std::vector<int64_t> shape, std::vector<double> values, bool requires_grad) {
  int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(values.size())) {
    throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return make_tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const std::vector<int64_t>& Tensor::shape() const { return node_->shape; }

int64_t Tensor::size() const { return node_ ? node_->size() : 0; }

int64_t Tensor::dim(int i) const {
  int n = static_cast<int>(node_->shape.size());
  if (i < 0) i += n;
  return node_->shape.at(static_cast<size_t>(i));
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::values() const { return node_->values; }

std::span<double> Tensor::mutable_values() { return node_->values; }

double Tensor::value_at(int64_t i) const { return node_->values.at(static_cast<size_t>(i)); }

double Tensor::scalar_value() const {
  if (size() != 1) throw std::invalid_argument("scalar_value() on tensor of shape " + shape_str(shape()));
  return node_->values[0];
}

std::span<const double> Tensor::grad() const {
  if (!node_ || node_->grad.empty()) return {};
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!node_ || node_->grad.empty()) return {};
  return node_->grad;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

void Tensor::backward() const {
  if (!node_) throw std::invalid_argument("backward() on empty tensor");
  if (size() != 1) {
    throw std::invalid_argument("backward() requires a scalar loss, got shape " + shape_str(shape()));
  }
  // Topological order by iterative DFS on parents.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      detail::Node* p = n->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  // order is children-after-parents; walk in reverse. Interior nodes get a
  // fresh buffer per sweep so repeated backward() calls accumulate exactly
  // once per call into the leaves.
  for (detail::Node* n : order) {
    if (n->grad_fn) n->grad.assign(n->values.size(), 0.0);
  }
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->grad_fn && !n->grad.empty()) n->grad_fn(*n);
  }
}

Tensor Tensor::reshaped(std::vector<int64_t> new_shape) const {
  int64_t n = shape_numel(new_shape);
  if (n != size()) {
    throw std::invalid_argument("reshape " + shape_str(shape()) + " -> " + shape_str(new_shape) +
                                " changes element count");
  }
  if (!grad_mode_enabled() || !requires_grad()) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(new_shape);
    node->values = node_->values;
    return make_tensor(std::move(node));
  }
  return make_op_result(std::move(new_shape), node_->values, {*this}, [](detail::Node& self) {
    auto& parent = *self.parents[0];
    parent.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) parent.grad[i] += self.grad[i];
  });
}

Tensor Tensor::detached() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->values = node_->values;
  return make_tensor(std::move(node));
}

Tensor make_tensor(std::shared_ptr<detail::Node> node) { return Tensor(std::move(node)); }

Tensor make_op_result(std::vector<int64_t> shape, std::vector<double> values,
                      std::vector<Tensor> parents, std::function<void(detail::Node&)> grad_fn) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  bool needs = false;
  if (grad_mode_enabled()) {
    for (const auto& p : parents) {
      if (p.requires_grad()) {
        needs = true;
        break;
      }
    }
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) {
      node->parents.push_back(p.node_ptr());
    }
    node->grad_fn = std::move(grad_fn);
  }
  return make_tensor(std::move(node));
}

}  // namespace simulstream
