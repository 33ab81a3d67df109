// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "paving/numerics/tape.hpp"

namespace paving::num {

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed, ordered list of parameter arrays.
class Adam {
 public:
  Adam(std::vector<Array*> params, AdamOptions opts);

  /// grads[i] must match params[i] in shape.
  void step(std::span<const Array> grads);
  void set_lr(double lr) { opts_.lr = lr; }
  long steps() const { return t_; }

 private:
  std::vector<Array*> params_;
  std::vector<Array> m_, v_;
  AdamOptions opts_;
  long t_ = 0;
};

/// Sums reference-leaf gradients over several tapes, in parameter order.
class GradAccumulator {
 public:
  explicit GradAccumulator(std::vector<Array*> params);

  void add(const Tape& tape);
  /// Adds coeff * 2 * p to each gradient (an L2 penalty coeff * |p|^2).
  void add_l2(double coeff);
  void scale(double c);
  void reset();
  std::span<const Array> grads() const { return grads_; }
  /// Largest absolute entry; non-finite entries raise NumericError.
  double max_abs() const;

 private:
  std::vector<Array*> params_;
  std::vector<Array> grads_;
  std::unordered_map<const Array*, Array> scratch_;
};

}  // namespace paving::num
