#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "sdcl/util.hpp"

namespace sdcl {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

template <typename T>
class Tensor;

namespace detail {

/// One node of the reverse-mode graph. Holds the value buffer, the lazily
/// allocated gradient buffer, and a closure that pushes this node's gradient
/// into its parents' gradients.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until needed; same length as value afterwards
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

/// Dense n-dimensional array of T with optional gradient tracking. Copies are
/// shallow (shared node); ops build a graph that backward() walks once in
/// reverse topological order.
template <typename T>
class Tensor {
 public:
  using Node = detail::Node<T>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(Shape shape, T v, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.assign(shape_numel(n->shape), v);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from_data(Shape shape, std::vector<T> data,
                          bool requires_grad = false) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
      throw ShapeError("from_data: got " + std::to_string(data.size()) +
                       " values for shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  template <typename Rng>
  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1),
                      bool requires_grad = false) {
    auto t = zeros(std::move(shape), requires_grad);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : t.node_->value) v = static_cast<T>(dist(rng)) * stddev;
    return t;
  }

  template <typename Rng>
  static Tensor uniform(Shape shape, Rng& rng, T lo, T hi,
                        bool requires_grad = false) {
    auto t = zeros(std::move(shape), requires_grad);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.node_->value) v = static_cast<T>(dist(rng));
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[i]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int64_t numel() const { return node_->numel(); }

  const T* data() const { return node_->value.data(); }
  T* data() { return node_->value.data(); }
  const std::vector<T>& values() const { return node_->value; }
  std::vector<T>& values() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<T>& grad() const { return node_->grad; }
  std::vector<T>& grad_buffer() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1)
      throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  /// Same values, detached from the graph (no parents, no grad tracking).
  Tensor detach() const {
    auto n = std::make_shared<Node>();
    n->shape = node_->shape;
    n->value = node_->value;
    return Tensor(std::move(n));
  }

  /// Reverse-mode sweep from this (scalar) tensor. Each reachable node's
  /// backward closure runs exactly once, in reverse topological order.
  void backward() {
    if (numel() != 1)
      throw ShapeError("backward() requires a scalar root, got " +
                       shape_str(shape()));
    backward_with(std::vector<T>{T(1)});
  }

  /// Backward with an explicit seed gradient (same shape as this tensor).
  void backward_with(const std::vector<T>& seed) {
    if (static_cast<int64_t>(seed.size()) != numel())
      throw ShapeError("backward seed size mismatch");
    std::vector<Node*> order;
    topo_collect(order);
    node_->ensure_grad();
    for (int64_t i = 0; i < numel(); ++i) node_->grad[i] += seed[i];
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward_fn) n->backward_fn(*n);
    }
  }

  std::shared_ptr<Node> node() const { return node_; }

  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  /// Builds a graph node from parents. requires_grad is inherited; the
  /// backward closure is installed only when some parent needs gradients.
  static Tensor make_op(Shape shape, std::vector<Tensor> parents,
                        std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.resize(shape_numel(n->shape));
    bool rg = false;
    for (auto& p : parents) rg = rg || p.requires_grad();
    n->requires_grad = rg;
    if (rg) {
      n->parents.reserve(parents.size());
      for (auto& p : parents) n->parents.push_back(p.node_);
      n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
  }

 private:
  void topo_collect(std::vector<Node*>& order) {
    // Iterative DFS; recursion depth over deep training graphs is unbounded.
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node* p = n->parents[next++].get();
        if (p->requires_grad && visited.insert(p).second)
          stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace sdcl
