// Copyright (c) 2026 distillkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "distillkit/errors.hpp"

namespace distillkit {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) {
    if (d == 0) throw ShapeError("extents must be positive, got " + shape_str(s));
    n *= d;
  }
  return n;
}

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(TensorNode&)> backprop;

  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
  }
};

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

inline void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op) + ": non-finite value produced");
    }
  }
}

}  // namespace detail

// Value-semantic handle to a node in an f64 compute graph. Ops record
// their parents and a backward closure; node ids increase in creation
// order, which is a topological order of the graph, so backward() can
// walk nodes by descending id and visit every consumer before its
// producers. Gradients accumulate additively across fan-out.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return from_values(std::move(shape), {}, /*fill=*/0.0);
  }

  static Tensor full(Shape shape, double value) {
    return from_values(std::move(shape), {}, value);
  }

  static Tensor scalar(double value) { return full({1}, value); }

  static Tensor from_data(Shape shape, std::vector<double> values) {
    std::size_t n = shape_numel(shape);
    if (values.size() != n) {
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    detail::check_finite(values, "tensor");
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->id = detail::next_node_id();
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return require().shape; }
  std::size_t rank() const { return require().shape.size(); }
  std::size_t dim(std::size_t i) const {
    const auto& s = require().shape;
    if (i >= s.size()) throw ShapeError("dim index out of range");
    return s[i];
  }
  std::size_t numel() const { return require().values.size(); }

  std::span<const double> values() const { return require().values; }

  // Direct mutation is reserved for leaves (parameter updates, finite
  // difference probes); mutating an op output would desynchronize the
  // stored backward closures.
  std::span<double> mutable_values() {
    auto& n = require();
    if (n.backprop) {
      throw ContractError("mutable_values: only leaf tensors may be mutated");
    }
    return n.values;
  }

  double value() const {
    const auto& n = require();
    if (n.values.size() != 1) {
      throw ContractError("value(): tensor is not scalar, shape " +
                          shape_str(n.shape));
    }
    return n.values[0];
  }

  double at(std::initializer_list<std::size_t> idx) const {
    return require().values[flat_index(idx)];
  }

  bool requires_grad() const { return require().requires_grad; }

  void set_requires_grad(bool rg) {
    auto& n = require();
    if (n.backprop) {
      throw ContractError("set_requires_grad: only leaves may be marked");
    }
    n.requires_grad = rg;
  }

  bool has_grad() const { return !require().grad.empty(); }
  std::span<const double> grad() const {
    const auto& n = require();
    if (n.grad.empty()) {
      throw ContractError("grad(): no gradient buffer; run backward first");
    }
    return n.grad;
  }

  void zero_grad() {
    auto& n = require();
    std::fill(n.grad.begin(), n.grad.end(), 0.0);
  }

  void clear_grad() { require().grad.clear(); }

  // Reverse-mode sweep from a scalar loss. Visits reachable nodes in
  // exact reverse topological (creation) order.
  void backward() const {
    auto& root = require();
    if (root.values.size() != 1) {
      throw ContractError("backward: root must be scalar, shape " +
                          shape_str(root.shape));
    }
    if (!root.requires_grad) {
      throw ContractError("backward: root does not require grad");
    }
    std::vector<detail::TensorNode*> order;
    std::unordered_set<detail::TensorNode*> seen;
    std::vector<detail::TensorNode*> stack{node_.get()};
    seen.insert(node_.get());
    while (!stack.empty()) {
      detail::TensorNode* n = stack.back();
      stack.pop_back();
      order.push_back(n);
      for (const auto& p : n->parents) {
        if (p->requires_grad && seen.insert(p.get()).second) {
          stack.push_back(p.get());
        }
      }
    }
    std::sort(order.begin(), order.end(),
              [](const detail::TensorNode* a, const detail::TensorNode* b) {
                return a->id > b->id;
              });
    root.ensure_grad();
    root.grad[0] += 1.0;
    for (detail::TensorNode* n : order) {
      if (n->backprop) {
        n->ensure_grad();
        n->backprop(*n);
      }
    }
  }

  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& handle() const { return node_; }

  // Op constructor used by ops.hpp. Parents and the closure are only
  // retained when a gradient can flow, so pure-inference graphs free
  // their intermediates as soon as handles go out of scope.
  static Tensor make_op(const char* op, Shape shape, std::vector<double> values,
                        std::vector<Tensor> parents,
                        std::function<void(detail::TensorNode&)> backprop) {
    std::size_t n = shape_numel(shape);
    if (values.size() != n) {
      throw ShapeError(std::string(op) + ": op produced " +
                       std::to_string(values.size()) + " values for shape " +
                       shape_str(shape));
    }
    detail::check_finite(values, op);
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->id = detail::next_node_id();
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.require().requires_grad;
    node->requires_grad = rg;
    if (rg) {
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.handle());
      node->backprop = std::move(backprop);
    }
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  static Tensor from_values(Shape shape, std::vector<double> values,
                            double fill) {
    std::size_t n = shape_numel(shape);
    values.assign(n, fill);
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->id = detail::next_node_id();
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
    const auto& n = require();
    if (idx.size() != n.shape.size()) {
      throw ShapeError("index rank mismatch");
    }
    std::size_t flat = 0;
    std::size_t i = 0;
    for (std::size_t v : idx) {
      if (v >= n.shape[i]) throw ShapeError("index out of range");
      flat = flat * n.shape[i] + v;
      ++i;
    }
    return flat;
  }

  detail::TensorNode& require() const {
    if (!node_) throw ContractError("tensor is empty");
    return *node_;
  }

  std::shared_ptr<detail::TensorNode> node_;
};

// Named leaf parameter, the unit the optimizer and checkpoints work in.
struct NamedParam {
  std::string name;
  Tensor tensor;
};

}  // namespace distillkit
