// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include "paving/numerics/array.hpp"

#include <algorithm>
#include <cmath>

#include "paving/errors.hpp"

namespace paving::num {

Array::Array(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Array::Array(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require_config(data_.size() == rows_ * cols_,
                 "array data length " + std::to_string(data_.size()) + " does not match shape " +
                     std::to_string(rows_) + "x" + std::to_string(cols_));
}

Array Array::row_vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Array(1, n, std::move(values));
}

double Array::item() const {
  require(data_.size() == 1, "item() on non-scalar array " + shape_string(*this));
  return data_[0];
}

bool Array::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Array::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string shape_string(const Array& a) {
  return "[" + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + "]";
}

}  // namespace paving::num
