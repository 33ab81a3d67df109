// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "paving/numerics/ops.hpp"
#include "paving/rng.hpp"

namespace paving::testing {

/// Builds a scalar loss from leaves bound to `inputs` (same order).
using LossBuilder = std::function<num::Var(num::Tape&, const std::vector<num::Var>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Central differences against the tape gradient. Relative error per entry is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline GradCheckResult grad_check(std::vector<num::Array> inputs, const LossBuilder& build, double eps = 1e-4,
                                  double floor = 1e-6) {
  auto evaluate = [&](std::vector<num::Array>& xs, std::vector<num::Array>* grads) {
    num::Tape tape;
    std::vector<num::Var> vars;
    for (auto& x : xs) vars.push_back(tape.parameter(x, "x"));
    num::Var loss = build(tape, vars);
    if (grads != nullptr) {
      tape.backward(loss);
      for (auto& v : vars) grads->push_back(tape.gradient(v));
    }
    return loss.value().item();
  };

  std::vector<num::Array> analytic;
  evaluate(inputs, &analytic);
  GradCheckResult out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double orig = inputs[i][j];
      inputs[i][j] = orig + eps;
      const double up = evaluate(inputs, nullptr);
      inputs[i][j] = orig - eps;
      const double down = evaluate(inputs, nullptr);
      inputs[i][j] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(a - numeric) / denom);
      ++out.checked;
    }
  }
  return out;
}

inline num::Array random_array(Rng& rng, std::size_t rows, std::size_t cols, double std = 1.0) {
  num::Array a(rows, cols);
  for (double& v : a.data()) v = std * rng.normal();
  return a;
}

/// Reduces any node to a scalar through a fixed random projection so every
/// output entry contributes a distinct weight.
inline num::Var project(num::Tape& tape, num::Var v, std::uint64_t seed) {
  Rng rng(seed);
  num::Var w = tape.constant(random_array(rng, v.rows(), v.cols()), "proj");
  return num::sum(num::mul(v, w));
}

}  // namespace paving::testing
