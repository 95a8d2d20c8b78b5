#include "tore/numerics/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace tore {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
thread_local bool t_grad_enabled = true;
thread_local FlopCounter* t_counter = nullptr;
}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

FlopCounter::FlopCounter() : previous_(t_counter) { t_counter = this; }
FlopCounter::~FlopCounter() { t_counter = previous_; }

void FlopCounter::add(std::uint64_t flops, bool matmul_like) {
  for (FlopCounter* c = t_counter; c != nullptr; c = c->previous_) {
    c->total_ += flops;
    if (matmul_like) c->matmul_ += flops;
  }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value) {
  auto node = std::make_shared<detail::Node<T>>();
  node->data.assign(tore::numel(shape), value);
  node->shape = std::move(shape);
  return BasicTensor(std::move(node));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from(Shape shape, std::vector<T> values) {
  if (tore::numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + to_string(shape) + " does not hold " + std::to_string(values.size()) +
                     " values");
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  return BasicTensor(std::move(node));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
  return from({1}, {value});
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " + to_string(node_->shape));
  }
  return node_->shape[axis];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (node_->data.size() != 1) throw ShapeError("item: tensor " + to_string(node_->shape) + " is not a scalar");
  return node_->data[0];
}

template <typename T>
T BasicTensor<T>::at(std::size_t r, std::size_t c) const {
  if (rank() != 2) throw ShapeError("at(r, c) requires a 2-D tensor");
  return node_->data.at(r * node_->shape[1] + c);
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  if (node_) node_->grad.clear();
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return from(node_->shape, node_->data);
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + (loss.defined() ? to_string(loss.shape()) : "<null>"));
  }
  using NodeT = detail::Node<T>;
  NodeT* root = loss.node();
  if (!root->requires_grad) throw std::logic_error("backward: loss does not depend on any tensor requiring grad");

  // Iterative post-order DFS yields a topological order (inputs first).
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodeT* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  // The tape lives for one pass.
  for (NodeT* node : order) {
    if (!node->is_leaf()) {
      node->backward = nullptr;
      node->inputs.clear();
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template void backward<float>(const BasicTensor<float>&);
template void backward<double>(const BasicTensor<double>&);

}  // namespace tore
