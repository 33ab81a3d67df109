// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>

#include "paving/numerics/array.hpp"

namespace paving::num {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Array& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const { return tape != nullptr; }
};

/// Records operations in execution order and differentiates a scalar output
/// in reverse. Nodes live in a deque so references stay valid while recording.
///
/// Gradients accumulate in recording order, which makes repeated runs
/// bit-identical. A tape is single-threaded; independent tapes are not shared.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::uint32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Array value, std::string label = {});
  /// A leaf whose gradient is reported by gradient(). `frozen` marks it as a
  /// stop-gradient leaf: it is never differentiated and reports zeros.
  Var parameter(Array value, std::string label, bool frozen = false);
  Var stop_gradient(Var v);
  /// Leaf that refers to an array owned elsewhere; the array must outlive the
  /// tape and stay unchanged until backward() has finished.
  Var reference(const Array& value, std::string label, bool trainable);

  const Array& value(Var v) const { return node_value(nodes_.at(v.id)); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const std::string& label(Var v) const { return nodes_.at(v.id).label; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse pass from a 1x1 node. Throws ContractViolation for non-scalars.
  void backward(Var loss);

  /// dloss/dv after backward(); zeros when v is unreachable or frozen.
  Array gradient(Var v) const;

  /// Adds the gradient of every trainable reference leaf into grads[&array].
  /// Arrays bound more than once receive the sum over their leaves.
  void accumulate_reference_gradients(std::unordered_map<const Array*, Array>& grads) const;

  // Op-implementation interface.
  Var record(const char* op, Array value, std::initializer_list<Var> inputs, Backward fn);
  Var record(const char* op, Array value, const std::vector<Var>& inputs, Backward fn);
  const Array& value_of(std::uint32_t id) const { return node_value(nodes_[id]); }
  const Array& grad_of(std::uint32_t id) const { return nodes_[id].grad; }
  Array& accumulate(std::uint32_t id);
  bool tracks(std::uint32_t id) const { return nodes_[id].requires_grad; }
  std::uint32_t input(std::uint32_t self, std::size_t i) const { return nodes_[self].inputs[i]; }

 private:
  struct Node {
    const char* op = "";
    std::string label;
    Array value;
    const Array* ext = nullptr;
    Array grad;
    std::vector<std::uint32_t> inputs;
    Backward backward;
    bool requires_grad = false;
  };

  static const Array& node_value(const Node& n) { return n.ext != nullptr ? *n.ext : n.value; }
  Var push(Node node);
  void check_finite(const Node& node, std::size_t id) const;

  std::deque<Node> nodes_;
};

inline const Array& Var::value() const { return tape->value(*this); }

}  // namespace paving::num
