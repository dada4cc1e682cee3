// Rank-4 tensors with a dynamic reverse-mode tape.
//
// Every Tensor is a shared handle to a graph node. Ops that read a tensor
// with requires_grad() record a backward closure on their result; calling
// backward() on a scalar walks the recorded graph in reverse topological
// order and accumulates vector-Jacobian products into every leaf.
//
// Retain policy: the graph is kept alive for as long as any handle to its
// root is alive. Each backward() pass releases the gradients of interior
// nodes once they have been propagated, so a second pass over the same
// graph adds exactly the same increment to the leaves again.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sprnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool valid() const { return n > 0 && c > 0 && h > 0 && w > 0; }

  std::string str() const {
    std::ostringstream os;
    os << '[' << n << ',' << c << ',' << h << ',' << w << ']';
    return os.str();
  }

  friend bool operator==(const Shape&, const Shape&) = default;
};

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

inline thread_local bool grad_enabled = true;

}  // namespace detail

/// While alive, ops on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<NodeT>()) {
    if (!shape.valid()) throw Error("tensor shape must be positive, got " + shape.str());
    node_->shape = shape;
    node_->value.assign(shape.numel(), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<NodeT>()) {
    if (!shape.valid()) throw Error("tensor shape must be positive, got " + shape.str());
    if (values.size() != shape.numel()) {
      throw Error("tensor data length " + std::to_string(values.size()) +
                  " does not match shape " + shape.str());
    }
    node_->shape = shape;
    node_->value = std::move(values);
  }

  static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }

  T& at(int n, int c, int h, int w) { return node_->value[index(n, c, h, w)]; }
  T at(int n, int c, int h, int w) const { return node_->value[index(n, c, h, w)]; }

  std::size_t index(int n, int c, int h, int w) const {
    const Shape& s = node_->shape;
    return ((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w;
  }

  T item() const {
    if (numel() != 1) throw Error("item() needs a scalar tensor, got " + shape().str());
    return node_->value[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    if (!node_->is_leaf) throw Error("requires_grad can only be set on leaf tensors");
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::span<T> grad() { return node_->ensure_grad(); }
  std::span<const T> grad() const { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  /// Copy of the values with no graph attached.
  Tensor detach() const { return Tensor(shape(), node_->value); }

  NodeT* node() const { return node_.get(); }
  const std::shared_ptr<NodeT>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<NodeT> node_;
};

namespace detail {

template <class T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_enabled) return false;
  for (const Tensor<T>* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

/// Wraps a freshly computed value as an op result, recording the backward
/// closure when any input participates in differentiation. The closure
/// reads the result's grad and accumulates into node.parents[i] in the
/// order the inputs were given (undefined inputs are skipped).
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward, const char* op) {
  Tensor<T> out(shape, std::move(value));
  if (should_record<T>(inputs)) {
    Node<T>* node = out.node();
    node->requires_grad = true;
    node->is_leaf = false;
    node->op = op;
    for (const Tensor<T>* t : inputs) {
      node->parents.push_back(t != nullptr && t->defined() ? t->node_ptr() : nullptr);
    }
    node->backward = std::move(backward);
  }
  return out;
}

template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward, const char* op) {
  Tensor<T> out(shape, std::move(value));
  bool record = false;
  if (grad_enabled) {
    for (const auto& t : inputs) record = record || t.requires_grad();
  }
  if (record) {
    Node<T>* node = out.node();
    node->requires_grad = true;
    node->is_leaf = false;
    node->op = op;
    for (const auto& t : inputs) node->parents.push_back(t.node_ptr());
    node->backward = std::move(backward);
  }
  return out;
}

/// Parent gradient buffer, or nullptr when that parent does not need one.
template <class T>
std::vector<T>* parent_grad(Node<T>& self, std::size_t i) {
  Node<T>* p = self.parents[i].get();
  if (p == nullptr || !p->requires_grad) return nullptr;
  return &p->ensure_grad();
}

template <class T>
const std::vector<T>& parent_value(Node<T>& self, std::size_t i) {
  return self.parents[i]->value;
}

}  // namespace detail

/// Reverse-mode sweep from a scalar root.
template <class T>
void backward(const Tensor<T>& root) {
  if (!root.defined() || root.numel() != 1) {
    throw Error("backward() needs a scalar root, got " +
                (root.defined() ? root.shape().str() : std::string("undefined")));
  }
  if (!root.requires_grad()) {
    throw Error("backward() root was not produced from any tensor requiring grad");
  }
  using NodeT = detail::Node<T>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* p = node->parents[next++].get();
      if (p != nullptr && p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (node->is_leaf) continue;
    if (!node->grad.empty() && node->backward) node->backward(*node);
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

}  // namespace sprnet
