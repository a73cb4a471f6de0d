#ifndef XMODAL_TENSOR_HPP_
#define XMODAL_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xmodal {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when shapes or arguments of a tensor operation are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward or backward pass produces NaN or Inf.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  // Set only on tensors produced by a recorded operation.
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl& self)> backward_fn;
  const char* op_name = nullptr;

  bool is_leaf() const { return !backward_fn; }
  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major n-dimensional array of doubles with an optional gradient.
///
/// Tensor is a shared handle: copies alias the same storage and graph node.
/// Use clone() for an independent value copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Mutating data of a tensor that already feeds a recorded graph
  // invalidates that graph; only touch leaves between steps.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  bool is_leaf() const;
  const char* op_name() const;

  Tensor clone() const;
  // New leaf sharing no graph history with this tensor.
  Tensor detach() const;

  // Stable identity of the underlying storage; equal for aliasing handles.
  const void* id() const { return impl_.get(); }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered record of the operations reachable from a root tensor.
/// Every node appears after all of its inputs.
struct GradTape {
  std::vector<std::shared_ptr<detail::TensorImpl>> nodes;
};

GradTape build_tape(const Tensor& root);

/// Accumulates d(loss)/d(t) into t.grad for every requires_grad tensor
/// reachable from `loss`. Leaf gradients sum across calls; call zero_grad
/// between optimizer steps.
void backward(const Tensor& loss);

/// Whether operations record onto the graph in the current thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// Builds the output node of an operation. Records the backward closure only
// when grad mode is on and some input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs,
                   std::function<void(TensorImpl& self)> backward_fn,
                   const char* op_name);

void check_finite(std::span<const double> values, const char* where);

}  // namespace detail

}  // namespace xmodal

#endif  // XMODAL_TENSOR_HPP_
