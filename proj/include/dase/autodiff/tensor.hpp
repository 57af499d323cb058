#pragma once

// Reverse-mode autodiff over dense row-major tensors.
//
// Every op allocates a fresh graph node holding its value, its parents and a
// closure that pushes the node's gradient back into the parents. backward()
// walks the graph once in reverse topological order. Leaves that require a
// gradient (parameters, probed inputs) keep their accumulated grad until
// zero_grad(); intermediate nodes are freed with the last handle.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dase/error.hpp"

namespace dase::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T{0});
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    if (data.size() != numel_of(shape)) {
      throw ShapeError("tensor: data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
  }

  static Tensor filled(Shape shape, T v) {
    const std::size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v));
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  std::span<T> data() { return node_->value; }
  T item() const { return node_->value.at(0); }

  /// Empty when no gradient has reached this tensor.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad() { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Writable gradient, allocated as zeros when missing.
  std::span<T> grad_buffer() {
    node_->ensure_grad();
    return node_->grad;
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.clear(); }

  /// Same values, cut from the graph.
  Tensor detach() const { return Tensor(node_->shape, node_->value, false); }

  /// Deep copy of value (and requires_grad flag), no graph history.
  Tensor clone() const { return Tensor(node_->shape, node_->value, node_->requires_grad); }

  /// Backpropagates from a single-element tensor.
  void backward() const {
    if (numel() != 1) throw ShapeError("backward: root must hold a single element, got " + shape_str(shape()));
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    // Iterative post-order DFS.
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node<T>* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  /// Builds an op result. The result requires a gradient iff any parent does;
  /// the backward closure is dropped otherwise.
  static Tensor from_op(Shape shape, std::vector<T> value, std::vector<Tensor> parents,
                        std::function<void(Node<T>&)> backward) {
    Tensor out(std::move(shape), std::move(value));
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    if (rg) {
      out.node_->requires_grad = true;
      for (auto& p : parents) out.node_->parents.push_back(p.node_);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Converts between scalar widths; the result is a fresh leaf.
template <class To, class From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> v(t.numel());
  std::transform(t.data().begin(), t.data().end(), v.begin(), [](From x) { return static_cast<To>(x); });
  return Tensor<To>(t.shape(), std::move(v));
}

}  // namespace dase::ad
