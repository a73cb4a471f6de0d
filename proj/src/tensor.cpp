#include "xmodal/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace xmodal {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

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

namespace detail {

std::vector<double>& TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

void check_finite(std::span<const double> values, const char* where) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string("non-finite value produced by ") +
                           where);
    }
  }
}

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::TensorImpl> make_impl(Shape shape,
                                              std::vector<double> data,
                                              bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return impl;
}

const detail::TensorImpl& checked(const std::shared_ptr<detail::TensorImpl>& p) {
  if (!p) throw std::logic_error("use of an undefined tensor");
  return *p;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(shape_numel(shape), value);
  return Tensor(make_impl(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  return Tensor(make_impl(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_).data.size(); }

std::span<const double> Tensor::data() const { return checked(impl_).data; }

std::span<double> Tensor::mutable_data() {
  checked(impl_);
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  checked(impl_);
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return !checked(impl_).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(impl_).grad; }

std::span<double> Tensor::mutable_grad() {
  checked(impl_);
  return impl_->grad_buffer();
}

void Tensor::zero_grad() {
  checked(impl_);
  impl_->grad.clear();
}

bool Tensor::is_leaf() const { return checked(impl_).is_leaf(); }

const char* Tensor::op_name() const { return checked(impl_).op_name; }

Tensor Tensor::clone() const {
  const auto& src = checked(impl_);
  auto impl = make_impl(src.shape, src.data, src.requires_grad);
  impl->grad = src.grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::detach() const {
  const auto& src = checked(impl_);
  return Tensor(make_impl(src.shape, src.data, false));
}

GradTape build_tape(const Tensor& root) {
  GradTape tape;
  if (!root.defined()) return tape;
  std::unordered_set<const detail::TensorImpl*> visited;
  // Iterative post-order DFS; frame = (node, next parent index).
  std::vector<std::pair<std::shared_ptr<detail::TensorImpl>, std::size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  visited.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto parent = node->parents[next++];
      if (visited.insert(parent.get()).second) stack.emplace_back(parent, 0);
      continue;
    }
    tape.nodes.push_back(node);
    stack.pop_back();
  }
  return tape;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::logic_error("backward on undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " +
                     shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward on a tensor that does not require grad");
  }
  GradTape tape = build_tape(loss);
  for (auto& node : tape.nodes) {
    if (!node->is_leaf()) node->grad.clear();
  }
  loss.impl()->grad_buffer()[0] += 1.0;
  for (auto it = tape.nodes.rbegin(); it != tape.nodes.rend(); ++it) {
    auto& node = **it;
    if (node.is_leaf() || node.grad.empty()) continue;
    node.backward_fn(node);
    detail::check_finite(node.grad, node.op_name ? node.op_name : "backward");
    node.grad.clear();
    node.grad.shrink_to_fit();
  }
  for (auto& node : tape.nodes) {
    if (node->is_leaf() && !node->grad.empty()) {
      detail::check_finite(node->grad, "backward (leaf gradient)");
    }
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs,
                   std::function<void(TensorImpl& self)> backward_fn,
                   const char* op_name) {
  check_finite(data, op_name);
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  auto impl = make_impl(std::move(shape), std::move(data), needs_grad);
  impl->op_name = op_name;
  if (needs_grad) {
    impl->parents.reserve(inputs.size());
    for (const auto& in : inputs) {
      if (in.requires_grad()) impl->parents.push_back(in.impl());
    }
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(impl));
}

}  // namespace detail

}  // namespace xmodal
