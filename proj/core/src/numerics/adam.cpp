// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include "paving/numerics/adam.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "paving/errors.hpp"

namespace paving::num {

Adam::Adam(std::vector<Array*> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
  for (const Array* p : params_) {
    m_.emplace_back(p->rows(), p->cols());
    v_.emplace_back(p->rows(), p->cols());
  }
}

void Adam::step(std::span<const Array> grads) {
  require(grads.size() == params_.size(), "adam: gradient count does not match parameter count");
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    require(grads[k].same_shape(*params_[k]), "adam: gradient shape mismatch");
    auto p = params_[k]->data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    const auto g = grads[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
      p[i] -= opts_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opts_.eps);
    }
  }
}

GradAccumulator::GradAccumulator(std::vector<Array*> params) : params_(std::move(params)) { reset(); }

void GradAccumulator::reset() {
  grads_.clear();
  for (const Array* p : params_) grads_.emplace_back(p->rows(), p->cols());
}

void GradAccumulator::add(const Tape& tape) {
  scratch_.clear();
  tape.accumulate_reference_gradients(scratch_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto it = scratch_.find(params_[i]);
    if (it == scratch_.end()) continue;
    auto dst = grads_[i].data();
    const auto src = it->second.data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

void GradAccumulator::add_l2(double coeff) {
  if (coeff == 0.0) return;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = grads_[i].data();
    const auto src = params_[i]->data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += 2.0 * coeff * src[j];
  }
}

void GradAccumulator::scale(double c) {
  for (Array& g : grads_)
    for (double& v : g.data()) v *= c;
}

double GradAccumulator::max_abs() const {
  double m = 0.0;
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    for (double v : grads_[i].data()) {
      if (!std::isfinite(v)) throw NumericError("non-finite gradient for parameter #" + std::to_string(i));
      m = std::max(m, std::abs(v));
    }
  }
  return m;
}

}  // namespace paving::num
