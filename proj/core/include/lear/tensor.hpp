#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "lear/error.hpp"

namespace lear {

// Dense extents, rank <= 4. Rasters are laid out batch x channel x height x
// width, row-major, contiguous.
struct Shape {
  std::array<std::int64_t, 4> dim{1, 1, 1, 1};
  int rank = 0;

  Shape() = default;
  Shape(std::initializer_list<std::int64_t> ds) {
    if (ds.size() > 4) throw Error("shape", "rank > 4 not supported");
    rank = static_cast<int>(ds.size());
    int i = 0;
    for (auto d : ds) dim[i++] = d;
  }

  static Shape bchw(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return Shape{n, c, h, w};
  }
  static Shape scalar() { return Shape{1}; }

  std::int64_t numel() const {
    std::int64_t p = 1;
    for (int i = 0; i < rank; ++i) p *= dim[i];
    return rank == 0 ? 1 : p;
  }
  std::int64_t n() const { return dim[0]; }
  std::int64_t c() const { return dim[1]; }
  std::int64_t h() const { return dim[2]; }
  std::int64_t w() const { return dim[3]; }

  bool operator==(const Shape& o) const {
    if (rank != o.rank) return false;
    for (int i = 0; i < rank; ++i)
      if (dim[i] != o.dim[i]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::string s;
    for (int i = 0; i < rank; ++i) {
      if (i) s += 'x';
      s += std::to_string(dim[i]);
    }
    return rank == 0 ? "scalar" : s;
  }
};

template <typename T>
class Graph;

// Lightweight handle to a node in a Graph. Values are immutable once the node
// is created; gradients become readable after Graph::backward.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  bool defined() const { return graph_ != nullptr; }
  const Shape& shape() const;
  std::span<const T> values() const;
  std::span<const T> grad() const;
  T item() const;

  Graph<T>* graph() const { return graph_; }
  std::int32_t id() const { return node_; }

 private:
  friend class Graph<T>;
  Tensor(Graph<T>* g, std::int32_t node) : graph_(g), node_(node) {}

  Graph<T>* graph_ = nullptr;
  std::int32_t node_ = -1;
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order of the DAG, so backward() is a single reverse sweep.
template <typename T>
class Graph {
 public:
  struct Node {
    Shape shape;
    std::vector<T> val;
    std::vector<T> grad;  // allocated during backward for needs_grad nodes
    bool needs_grad = false;
    std::function<void(Graph&, std::int32_t)> backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Tensor<T> leaf(const Shape& s, std::vector<T> values, bool requires_grad = false) {
    if (static_cast<std::int64_t>(values.size()) != s.numel()) {
      throw Error("shape", "leaf value count " + std::to_string(values.size()) +
                               " does not match shape " + s.str());
    }
    return wrap(add_node(s, std::move(values), requires_grad, nullptr));
  }

  Tensor<T> constant(const Shape& s, std::vector<T> values) {
    return leaf(s, std::move(values), false);
  }

  Tensor<T> full(const Shape& s, T value) {
    return leaf(s, std::vector<T>(static_cast<std::size_t>(s.numel()), value), false);
  }

  Tensor<T> zeros(const Shape& s) { return full(s, T(0)); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once. `loss` must be a
  // single-element tensor.
  void backward(const Tensor<T>& loss) {
    if (loss.graph() != this) throw Error("graph", "loss belongs to another graph");
    if (nodes_[loss.id()].shape.numel() != 1)
      throw Error("graph", "backward requires a scalar loss");
    for (auto& n : nodes_) {
      if (n.needs_grad) n.grad.assign(n.val.size(), T(0));
    }
    auto& lnode = nodes_[loss.id()];
    if (!lnode.needs_grad)
      throw Error("graph", "loss does not depend on any differentiable leaf");
    lnode.grad[0] = T(1);
    for (std::int32_t i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.needs_grad && n.backward) n.backward(*this, i);
    }
  }

  void reset() { nodes_.clear(); }

  std::size_t node_count() const { return nodes_.size(); }

  // ---- op construction interface ----
  std::int32_t add_node(const Shape& s, std::vector<T> val, bool needs_grad,
                        std::function<void(Graph&, std::int32_t)> backward) {
    Node n;
    n.shape = s;
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return static_cast<std::int32_t>(nodes_.size()) - 1;
  }

  Node& node(std::int32_t i) { return nodes_[i]; }
  const Node& node(std::int32_t i) const { return nodes_[i]; }
  Tensor<T> wrap(std::int32_t i) { return Tensor<T>(this, i); }

  // Gradient buffer of node i, or nullptr when i does not require gradients.
  T* grad_ptr(std::int32_t i) {
    Node& n = nodes_[i];
    if (!n.needs_grad) return nullptr;
    return n.grad.data();
  }

 private:
  std::vector<Node> nodes_;
};

template <typename T>
const Shape& Tensor<T>::shape() const {
  return graph_->node(node_).shape;
}

template <typename T>
std::span<const T> Tensor<T>::values() const {
  const auto& v = graph_->node(node_).val;
  return {v.data(), v.size()};
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  const auto& n = graph_->node(node_);
  if (!n.needs_grad || n.grad.size() != n.val.size())
    throw Error("graph", "gradient not available; run backward first");
  return {n.grad.data(), n.grad.size()};
}

template <typename T>
T Tensor<T>::item() const {
  const auto& v = graph_->node(node_).val;
  if (v.size() != 1) throw Error("graph", "item() on non-scalar tensor");
  return v[0];
}

}  // namespace lear
