// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "gcrnn/tensor.hpp"

namespace gcrnn {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is always topologically sorted and backward is a single reverse sweep.
class Graph {
 public:
  /// Receives the gradient of the node's output and accumulates into inputs.
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that receives a gradient.
  Var parameter(Tensor value);
  /// Leaf that never receives a gradient.
  Var constant(Tensor value);

  /// Appends an op node. `backward` may be empty when no input needs grad.
  Var add_node(std::string op, Tensor value, std::vector<std::size_t> inputs,
               BackwardFn backward);

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool any_requires_grad(const std::vector<Var>& vars) const;

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  /// Gradient of the last backward() target; zeros if the node was unreached.
  const Tensor& grad(std::size_t id) const;
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const {
    return nodes_.at(id).inputs;
  }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Adds `g` into the gradient buffer of node `id` (allocated lazily).
  void accumulate(std::size_t id, const Tensor& g);
  /// Direct access to a node's gradient buffer, allocating zeros if needed.
  Tensor& grad_buffer(std::size_t id);

  /// Seeds d(target)/d(target) = 1 (target must hold one element) and sweeps
  /// the tape once in reverse. Each node's backward runs at most once.
  void backward(Var target);

  /// Number of node backward functions executed by the last backward().
  std::size_t backward_visits() const noexcept { return visits_; }

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

}  // namespace gcrnn
