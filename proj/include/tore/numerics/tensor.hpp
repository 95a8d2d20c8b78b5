#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tore {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes do not conform for an op.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an op produces NaN or Inf from finite inputs.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  T* grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad.data();
  }
  bool is_leaf() const { return inputs.empty() && !backward; }
};

}  // namespace detail

/// Dense row-major array with an optional gradient.
///
/// A tensor is a shared handle: copies alias the same storage, which is what
/// lets parameters be referenced from many places in a forward pass while
/// gradients accumulate in one buffer. Ops never mutate their inputs.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  BasicTensor() = default;
  explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}

  static BasicTensor zeros(Shape shape);
  static BasicTensor full(Shape shape, T value);
  static BasicTensor from(Shape shape, std::vector<T> values);
  static BasicTensor scalar(T value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  /// Direct write access; only meaningful for leaves (parameters, inputs).
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T at(std::size_t i) const { return node_->data.at(i); }
  T at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  BasicTensor& set_requires_grad(bool on);
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad();

  /// Fresh leaf holding a copy of the data, disconnected from any graph.
  BasicTensor detach() const;
  /// Cast to another scalar type (new leaf, no graph).
  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(node_->data.begin(), node_->data.end());
    return BasicTensor<U>::from(node_->shape, std::move(out));
  }

  detail::Node<T>* node() const { return node_.get(); }
  const NodePtr& node_ptr() const { return node_; }

 private:
  NodePtr node_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Whether ops record a graph on the current thread.
bool grad_enabled();

/// Disables graph recording for the lifetime of the guard (eval, benchmarking).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Counts nominal floating-point work performed by ops on this thread while
/// active: 2 per multiply-accumulate in matmul-like ops, 5 per element for
/// layer norm, 3 per element for softmax, 1 per element for elementwise ops.
class FlopCounter {
 public:
  FlopCounter();
  ~FlopCounter();
  FlopCounter(const FlopCounter&) = delete;
  FlopCounter& operator=(const FlopCounter&) = delete;

  std::uint64_t total() const { return total_; }
  std::uint64_t matmul() const { return matmul_; }

  static void add(std::uint64_t flops, bool matmul_like);

 private:
  std::uint64_t total_ = 0;
  std::uint64_t matmul_ = 0;
  FlopCounter* previous_;
};

/// Runs reverse-mode differentiation from a scalar loss and then drops the
/// recorded graph. Gradients accumulate into every reachable tensor that
/// requires grad.
template <typename T>
void backward(const BasicTensor<T>& loss);

}  // namespace tore
