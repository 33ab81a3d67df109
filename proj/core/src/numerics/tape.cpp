// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include "paving/numerics/tape.hpp"

#include <cmath>

#include "paving/errors.hpp"

namespace paving::num {

Var Tape::push(Node node) {
  const auto id = nodes_.size();
  if (node.ext == nullptr) check_finite(node, id);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(id)};
}

void Tape::check_finite(const Node& node, std::size_t id) const {
  const Array& v = node_value(node);
  const auto data = v.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (std::isfinite(data[i])) continue;
    std::string who = "node #" + std::to_string(id) + " (" + node.op;
    if (!node.label.empty()) who += " '" + node.label + "'";
    who += ") at row " + std::to_string(i / v.cols()) + ", col " + std::to_string(i % v.cols());
    throw NumericError("non-finite value produced at " + who);
  }
}

Var Tape::constant(Array value, std::string label) {
  Node n;
  n.op = "constant";
  n.label = std::move(label);
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(Array value, std::string label, bool frozen) {
  Node n;
  n.op = frozen ? "frozen" : "parameter";
  n.label = std::move(label);
  n.value = std::move(value);
  n.requires_grad = !frozen;
  return push(std::move(n));
}

Var Tape::stop_gradient(Var v) { return constant(value(v), "stop_gradient"); }

Var Tape::reference(const Array& value, std::string label, bool trainable) {
  Node n;
  n.op = trainable ? "parameter" : "frozen";
  n.label = std::move(label);
  n.ext = &value;
  n.requires_grad = trainable;
  return push(std::move(n));
}

Var Tape::record(const char* op, Array value, std::initializer_list<Var> inputs, Backward fn) {
  return record(op, std::move(value), std::vector<Var>(inputs), std::move(fn));
}

Var Tape::record(const char* op, Array value, const std::vector<Var>& inputs, Backward fn) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    require(in.tape == this, std::string("input of ") + op + " recorded on a different tape");
    n.inputs.push_back(in.id);
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

Array& Tape::accumulate(std::uint32_t id) {
  Node& n = nodes_[id];
  const Array& v = node_value(n);
  if (n.grad.empty() && !v.empty()) n.grad = Array(v.rows(), v.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  require(loss.tape == this, "backward: loss belongs to another tape");
  const Node& root = nodes_.at(loss.id);
  const Array& rv = node_value(root);
  require(rv.rows() == 1 && rv.cols() == 1, "backward: loss must be a scalar node, got " + shape_string(rv));
  for (Node& n : nodes_) n.grad = Array();
  if (!root.requires_grad) return;
  accumulate(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, static_cast<std::uint32_t>(i));
  }
}

Array Tape::gradient(Var v) const {
  const Node& n = nodes_.at(v.id);
  const Array& nv = node_value(n);
  if (!n.requires_grad || n.grad.empty()) return Array(nv.rows(), nv.cols());
  return n.grad;
}

void Tape::accumulate_reference_gradients(std::unordered_map<const Array*, Array>& grads) const {
  for (const Node& n : nodes_) {
    if (n.ext == nullptr || !n.requires_grad || n.grad.empty()) continue;
    auto [it, inserted] = grads.try_emplace(n.ext, n.grad);
    if (inserted) continue;
    auto dst = it->second.data();
    const auto src = n.grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

}  // namespace paving::num
