// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "paving/backbone.hpp"

namespace paving::testing {

inline BackboneConfig tiny_backbone_config() {
  BackboneConfig c;
  c.vocab_size = 16;
  c.width = 16;
  c.n_layers = 4;
  c.n_heads = 2;
  c.max_seq_len = 16;
  c.seed = 21;
  return c;
}

/// Adds a fixed array at one layer.
class ConstantHook : public ResidualHook {
 public:
  ConstantHook(int layer, num::Array delta) : layer_(layer), delta_(std::move(delta)) {}
  bool active(int layer) const override { return layer == layer_; }
  num::Var edit(num::Tape& tape, int, num::Var states) override {
    if (delta_.rows() != states.rows()) {
      num::Array tiled(states.rows(), states.cols());
      for (std::size_t r = 0; r < tiled.rows(); ++r)
        for (std::size_t c = 0; c < tiled.cols(); ++c) tiled(r, c) = delta_(0, c);
      return tape.constant(tiled, "delta");
    }
    return tape.constant(delta_, "delta");
  }

 private:
  int layer_;
  num::Array delta_;
};

}  // namespace paving::testing
