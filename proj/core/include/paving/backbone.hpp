// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "paving/numerics/ops.hpp"

namespace paving {

using Tokens = std::vector<int>;

struct BackboneConfig {
  int vocab_size = 64;
  int width = 32;
  int n_layers = 8;
  int n_heads = 4;
  int max_seq_len = 32;
  int ffn_mult = 4;
  std::uint64_t seed = 7;

  void validate() const;
  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct BlockParams {
  num::Array ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o;
  num::Array ln2_g, ln2_b, w_ff1, b_ff1, w_ff2, b_ff2;
};

/// Pre-norm decoder weights. Layer 0 is the embedding output; blocks are layers 1..L.
struct BackboneParams {
  num::Array tok_emb, pos_emb;
  std::vector<BlockParams> blocks;
  num::Array lnf_g, lnf_b, w_out, b_out;

  static BackboneParams init(const BackboneConfig& cfg);
  std::vector<std::pair<std::string, num::Array*>> named();
  std::vector<std::pair<std::string, const num::Array*>> named() const;
  static BackboneParams from_named(const BackboneConfig& cfg, const std::map<std::string, num::Array>& arrays);
};

/// Additive residual edit applied after a block's final residual add.
class ResidualHook {
 public:
  virtual ~ResidualHook() = default;
  /// False means the layer is left untouched (no add is recorded at all).
  virtual bool active(int layer) const = 0;
  /// Returns delta (T x d) for the residual states at `layer`.
  virtual num::Var edit(num::Tape& tape, int layer, num::Var states) = 0;
};

struct TapeForward {
  std::vector<num::Var> states;  // layers 0..L, each T x d
  num::Var logits;               // T x vocab
};

/// Residual states and next-token logits of one forward pass.
struct ResidualTrace {
  std::vector<num::Array> states;  // layers 0..L, each positions x d
  num::Array step_logits;          // steps x vocab
  std::size_t prompt_len = 0;

  std::size_t steps() const { return step_logits.rows(); }
  std::vector<double> step_probs(std::size_t step) const;
};

/// Top-k frozen-base reference per teacher-forced step.
struct TopKReference {
  std::size_t k = 0;
  std::vector<num::SupportDistribution> steps;
};

/// Binds backbone weights onto a tape and runs the decoder.
TapeForward run_decoder(num::Tape& tape, const BackboneConfig& cfg, const BackboneParams& params,
                        std::span<const int> tokens, ResidualHook* hook, bool trainable);

/// Argmax with ties broken toward the lower token id.
int argmax_token(std::span<const double> logits);

/// Indices of the k largest values, ties toward lower index, descending order.
std::vector<int> top_k_ids(std::span<const double> values, std::size_t k);

/// The frozen autoregressive backbone. Immutable after construction.
class Backbone {
 public:
  explicit Backbone(const BackboneConfig& cfg);
  Backbone(const BackboneConfig& cfg, BackboneParams params);

  const BackboneConfig& config() const { return cfg_; }
  const BackboneParams& params() const { return params_; }
  int width() const { return cfg_.width; }
  int n_layers() const { return cfg_.n_layers; }
  /// SHA-256 over config and every parameter payload.
  std::string checksum() const;

  TapeForward forward(num::Tape& tape, std::span<const int> tokens, ResidualHook* hook) const;
  /// Full pass; step_logits holds one row per input position.
  ResidualTrace forward(std::span<const int> tokens, ResidualHook* hook = nullptr) const;
  ResidualTrace teacher_forced_trace(std::span<const int> prompt, std::span<const int> continuation,
                                     ResidualHook* hook, std::size_t horizon) const;
  TopKReference cache_topk_reference(std::span<const int> prompt, std::span<const int> continuation,
                                     std::size_t k) const;
  /// Greedy continuation; the end-of-sequence token stops decoding and is not returned.
  Tokens greedy_decode(std::span<const int> prompt, std::size_t max_new, ResidualHook* hook, int eos_token) const;

 private:
  BackboneConfig cfg_;
  BackboneParams params_;
};

/// Positions whose logits predict continuation[t]: prompt_len - 1 + t.
std::vector<std::size_t> step_positions(std::size_t prompt_len, std::size_t steps);

}  // namespace paving
