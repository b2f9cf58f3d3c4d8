// SPDX-License-Identifier: Apache-2.0
#include "gcrnn/autograd.hpp"

#include "gcrnn/errors.hpp"

namespace gcrnn {

const Tensor& Var::value() const { return graph->value(id); }
const Tensor& Var::grad() const { return graph->grad(id); }

Var Graph::parameter(Tensor value) {
  nodes_.push_back(Node{"parameter", std::move(value), {}, {}, {}, true});
  return Var{this, nodes_.size() - 1};
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{"constant", std::move(value), {}, {}, {}, false});
  return Var{this, nodes_.size() - 1};
}

Var Graph::add_node(std::string op, Tensor value, std::vector<std::size_t> inputs,
                    BackwardFn backward) {
  bool needs_grad = false;
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) {
      throw DimensionError(op + ": input node " + std::to_string(in) +
                           " does not precede it");
    }
    needs_grad = needs_grad || nodes_[in].requires_grad;
  }
#ifndef NDEBUG
  if (!value.all_finite()) {
    throw TrainingError(op + ": non-finite value in forward output");
  }
#endif
  if (!needs_grad) backward = nullptr;
  nodes_.push_back(Node{std::move(op), std::move(value), {}, std::move(inputs),
                        std::move(backward), needs_grad});
  return Var{this, nodes_.size() - 1};
}

bool Graph::any_requires_grad(const std::vector<Var>& vars) const {
  for (const Var& v : vars) {
    if (requires_grad(v.id)) return true;
  }
  return false;
}

const Tensor& Graph::grad(std::size_t id) const {
  return const_cast<Graph*>(this)->grad_buffer(id);
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

void Graph::accumulate(std::size_t id, const Tensor& g) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return;
  grad_buffer(id).add_inplace(g);
}

void Graph::backward(Var target) {
  if (target.graph != this) throw DimensionError("backward target from another graph");
  if (value(target.id).size() != 1) {
    throw DimensionError("backward target must hold one value, got shape " +
                         shape_string(value(target.id).shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  visits_ = 0;
  grad_buffer(target.id)[0] = 1.0;
  std::vector<bool> reached(nodes_.size(), false);
  reached[target.id] = true;
  for (std::size_t i = target.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!reached[i] || !n.backward) continue;
    n.backward(*this, grad_buffer(i));
    ++visits_;
    for (std::size_t in : n.inputs) {
      if (nodes_[in].requires_grad) reached[in] = true;
    }
  }
}

}  // namespace gcrnn
