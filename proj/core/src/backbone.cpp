// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include "paving/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "paving/checksum.hpp"
#include "paving/errors.hpp"
#include "paving/rng.hpp"

namespace paving {

using num::Array;
using num::Tape;
using num::Var;

void BackboneConfig::validate() const {
  require_config(vocab_size >= 8, "backbone: vocab_size must be at least 8");
  require_config(width >= 2 && n_heads >= 1 && width % n_heads == 0, "backbone: width must be divisible by n_heads");
  require_config(n_layers >= 1, "backbone: n_layers must be positive");
  require_config(max_seq_len >= 2, "backbone: max_seq_len must be at least 2");
  require_config(ffn_mult >= 1, "backbone: ffn_mult must be positive");
}

namespace {

Array normal_array(Rng& rng, std::size_t rows, std::size_t cols, double std) {
  Array a(rows, cols);
  for (double& v : a.data()) v = std * rng.normal();
  return a;
}

}  // namespace

BackboneParams BackboneParams::init(const BackboneConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const auto d = static_cast<std::size_t>(cfg.width);
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  const auto f = d * static_cast<std::size_t>(cfg.ffn_mult);
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double out_scale = 1.0 / std::sqrt(2.0 * cfg.n_layers);

  BackboneParams p;
  p.tok_emb = normal_array(rng, v, d, 0.5);
  p.pos_emb = normal_array(rng, static_cast<std::size_t>(cfg.max_seq_len), d, 0.1);
  for (int l = 0; l < cfg.n_layers; ++l) {
    BlockParams b;
    b.ln1_g = Array(1, d, 1.0);
    b.ln1_b = Array(1, d);
    b.w_qkv = normal_array(rng, d, 3 * d, in_std);
    b.b_qkv = Array(1, 3 * d);
    b.w_o = normal_array(rng, d, d, in_std * out_scale);
    b.b_o = Array(1, d);
    b.ln2_g = Array(1, d, 1.0);
    b.ln2_b = Array(1, d);
    b.w_ff1 = normal_array(rng, d, f, in_std);
    b.b_ff1 = Array(1, f);
    b.w_ff2 = normal_array(rng, f, d, out_scale / std::sqrt(static_cast<double>(f)));
    b.b_ff2 = Array(1, d);
    p.blocks.push_back(std::move(b));
  }
  p.lnf_g = Array(1, d, 1.0);
  p.lnf_b = Array(1, d);
  p.w_out = normal_array(rng, d, v, in_std);
  p.b_out = Array(1, v);
  return p;
}

std::vector<std::pair<std::string, Array*>> BackboneParams::named() {
  std::vector<std::pair<std::string, Array*>> out{{"tok_emb", &tok_emb}, {"pos_emb", &pos_emb}};
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    BlockParams& b = blocks[l];
    const std::string pre = "block" + std::to_string(l + 1) + ".";
    out.insert(out.end(), {{pre + "ln1_g", &b.ln1_g}, {pre + "ln1_b", &b.ln1_b},   {pre + "w_qkv", &b.w_qkv},
                           {pre + "b_qkv", &b.b_qkv}, {pre + "w_o", &b.w_o},       {pre + "b_o", &b.b_o},
                           {pre + "ln2_g", &b.ln2_g}, {pre + "ln2_b", &b.ln2_b},   {pre + "w_ff1", &b.w_ff1},
                           {pre + "b_ff1", &b.b_ff1}, {pre + "w_ff2", &b.w_ff2},   {pre + "b_ff2", &b.b_ff2}});
  }
  out.insert(out.end(), {{"lnf_g", &lnf_g}, {"lnf_b", &lnf_b}, {"w_out", &w_out}, {"b_out", &b_out}});
  return out;
}

std::vector<std::pair<std::string, const Array*>> BackboneParams::named() const {
  auto mut = const_cast<BackboneParams*>(this)->named();
  std::vector<std::pair<std::string, const Array*>> out;
  out.reserve(mut.size());
  for (auto& [name, ptr] : mut) out.emplace_back(name, ptr);
  return out;
}

BackboneParams BackboneParams::from_named(const BackboneConfig& cfg, const std::map<std::string, Array>& arrays) {
  BackboneParams p = init(cfg);
  for (auto& [name, ptr] : p.named()) {
    const auto it = arrays.find(name);
    require_config(it != arrays.end(), "backbone checkpoint is missing array '" + name + "'");
    require_config(it->second.same_shape(*ptr), "backbone array '" + name + "' has shape " +
                                                    num::shape_string(it->second) + ", expected " +
                                                    num::shape_string(*ptr));
    require_config(it->second.all_finite(), "backbone array '" + name + "' contains non-finite values");
    *ptr = it->second;
  }
  return p;
}

std::vector<double> ResidualTrace::step_probs(std::size_t step) const {
  return num::softmax(step_logits.row(step));
}

std::vector<std::size_t> step_positions(std::size_t prompt_len, std::size_t steps) {
  require(prompt_len >= 1, "step_positions: empty prompt");
  std::vector<std::size_t> pos(steps);
  std::iota(pos.begin(), pos.end(), prompt_len - 1);
  return pos;
}

TapeForward run_decoder(Tape& tape, const BackboneConfig& cfg, const BackboneParams& params,
                        std::span<const int> tokens, ResidualHook* hook, bool trainable) {
  require(!tokens.empty(), "backbone forward: empty token sequence");
  require_config(tokens.size() <= static_cast<std::size_t>(cfg.max_seq_len),
                 "backbone forward: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                     std::to_string(cfg.max_seq_len));
  for (int id : tokens)
    require(id >= 0 && id < cfg.vocab_size, "backbone forward: token id " + std::to_string(id) + " out of range");

  const std::size_t T = tokens.size();
  const auto d = static_cast<std::size_t>(cfg.width);
  const auto H = static_cast<std::size_t>(cfg.n_heads);
  const std::size_t dh = d / H;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto ref = [&](const Array& a, const char* name) { return tape.reference(a, name, trainable); };

  std::vector<std::size_t> positions(T);
  std::iota(positions.begin(), positions.end(), std::size_t{0});

  TapeForward out;
  Var x = num::add(num::embedding(ref(params.tok_emb, "tok_emb"), tokens),
                   num::gather_rows(ref(params.pos_emb, "pos_emb"), positions));
  out.states.push_back(x);

  for (int l = 1; l <= cfg.n_layers; ++l) {
    const BlockParams& b = params.blocks[static_cast<std::size_t>(l - 1)];
    Var a = num::layer_norm(x, ref(b.ln1_g, "ln1_g"), ref(b.ln1_b, "ln1_b"));
    Var qkv = num::add_row(num::matmul(a, ref(b.w_qkv, "w_qkv")), ref(b.b_qkv, "b_qkv"));
    std::vector<Var> heads;
    heads.reserve(H);
    for (std::size_t h = 0; h < H; ++h) {
      Var q = num::slice_cols(qkv, h * dh, dh);
      Var k = num::slice_cols(qkv, d + h * dh, dh);
      Var v = num::slice_cols(qkv, 2 * d + h * dh, dh);
      Var p = num::causal_softmax(num::scale(num::matmul(q, num::transpose(k)), att_scale));
      heads.push_back(num::matmul(p, v));
    }
    Var attn = num::add_row(num::matmul(num::concat_cols(heads), ref(b.w_o, "w_o")), ref(b.b_o, "b_o"));
    x = num::add(x, attn);
    Var f = num::layer_norm(x, ref(b.ln2_g, "ln2_g"), ref(b.ln2_b, "ln2_b"));
    Var ff = num::gelu(num::add_row(num::matmul(f, ref(b.w_ff1, "w_ff1")), ref(b.b_ff1, "b_ff1")));
    ff = num::add_row(num::matmul(ff, ref(b.w_ff2, "w_ff2")), ref(b.b_ff2, "b_ff2"));
    x = num::add(x, ff);

    if (hook != nullptr && hook->active(l)) {
      Var delta;
      try {
        delta = hook->edit(tape, l, x);
      } catch (const NumericError& e) {
        throw NumericError("edit hook at layer " + std::to_string(l) + ": " + e.what() +
                           " (row = token position)");
      }
      require_config(delta.value().same_shape(x.value()), "edit hook at layer " + std::to_string(l) +
                                                              " returned shape " + num::shape_string(delta.value()));
      x = num::add(x, delta);
    }
    out.states.push_back(x);
  }
  Var hf = num::layer_norm(x, ref(params.lnf_g, "lnf_g"), ref(params.lnf_b, "lnf_b"));
  out.logits = num::add_row(num::matmul(hf, ref(params.w_out, "w_out")), ref(params.b_out, "b_out"));
  return out;
}

int argmax_token(std::span<const double> logits) {
  require(!logits.empty(), "argmax of empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<int>(best);
}

std::vector<int> top_k_ids(std::span<const double> values, std::size_t k) {
  require(k >= 1 && k <= values.size(), "top_k_ids: k must be in [1, n]");
  std::vector<int> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return values[static_cast<std::size_t>(a)] > values[static_cast<std::size_t>(b)];
  });
  idx.resize(k);
  return idx;
}

Backbone::Backbone(const BackboneConfig& cfg) : Backbone(cfg, BackboneParams::init(cfg)) {}

Backbone::Backbone(const BackboneConfig& cfg, BackboneParams params) : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  require_config(params_.blocks.size() == static_cast<std::size_t>(cfg_.n_layers),
                 "backbone: parameter block count does not match n_layers");
}

std::string Backbone::checksum() const {
  Sha256 h;
  h.update("backbone-v1;" + std::to_string(cfg_.vocab_size) + ";" + std::to_string(cfg_.width) + ";" +
           std::to_string(cfg_.n_layers) + ";" + std::to_string(cfg_.n_heads) + ";" +
           std::to_string(cfg_.max_seq_len) + ";" + std::to_string(cfg_.ffn_mult) + ";");
  for (const auto& [name, arr] : params_.named()) {
    h.update(name);
    h.update_doubles(arr->data());
  }
  return h.hex_digest();
}

TapeForward Backbone::forward(Tape& tape, std::span<const int> tokens, ResidualHook* hook) const {
  return run_decoder(tape, cfg_, params_, tokens, hook, false);
}

ResidualTrace Backbone::forward(std::span<const int> tokens, ResidualHook* hook) const {
  Tape tape;
  TapeForward f = forward(tape, tokens, hook);
  ResidualTrace trace;
  trace.prompt_len = tokens.size();
  for (const Var& s : f.states) trace.states.push_back(s.value());
  trace.step_logits = f.logits.value();
  return trace;
}

ResidualTrace Backbone::teacher_forced_trace(std::span<const int> prompt, std::span<const int> continuation,
                                             ResidualHook* hook, std::size_t horizon) const {
  require(!prompt.empty(), "teacher_forced_trace: empty prompt");
  require_config(continuation.size() <= horizon, "teacher_forced_trace: continuation length " +
                                                     std::to_string(continuation.size()) +
                                                     " exceeds trace horizon " + std::to_string(horizon));
  Tokens tokens(prompt.begin(), prompt.end());
  tokens.insert(tokens.end(), continuation.begin(), continuation.end());
  Tape tape;
  TapeForward f = forward(tape, tokens, hook);
  ResidualTrace trace;
  trace.prompt_len = prompt.size();
  for (const Var& s : f.states) trace.states.push_back(s.value());
  const auto pos = step_positions(prompt.size(), continuation.size());
  const Array& logits = f.logits.value();
  trace.step_logits = Array(pos.size(), logits.cols());
  for (std::size_t t = 0; t < pos.size(); ++t) {
    const auto src = logits.row(pos[t]);
    std::copy(src.begin(), src.end(), trace.step_logits.row(t).begin());
  }
  return trace;
}

TopKReference Backbone::cache_topk_reference(std::span<const int> prompt, std::span<const int> continuation,
                                             std::size_t k) const {
  require(k >= 1, "cache_topk_reference: k must be at least 1");
  require_config(k <= static_cast<std::size_t>(cfg_.vocab_size), "cache_topk_reference: k exceeds vocab size");
  const ResidualTrace trace = teacher_forced_trace(prompt, continuation, nullptr, continuation.size());
  TopKReference ref;
  ref.k = k;
  for (std::size_t t = 0; t < trace.steps(); ++t) {
    const auto logits = trace.step_logits.row(t);
    num::SupportDistribution row;
    row.ids = top_k_ids(logits, k);
    // Softmax over the support logits equals the renormalized top-k mass and is
    // bit-identical to what support_kl computes for an unedited pass.
    std::vector<double> restricted;
    for (int id : row.ids) restricted.push_back(logits[static_cast<std::size_t>(id)]);
    row.probs = num::softmax(restricted);
    ref.steps.push_back(std::move(row));
  }
  return ref;
}

Tokens Backbone::greedy_decode(std::span<const int> prompt, std::size_t max_new, ResidualHook* hook,
                               int eos_token) const {
  require(max_new >= 1, "greedy_decode: max_new must be at least 1");
  Tokens seq(prompt.begin(), prompt.end());
  Tokens out;
  for (std::size_t step = 0; step < max_new; ++step) {
    if (seq.size() >= static_cast<std::size_t>(cfg_.max_seq_len)) break;
    Tape tape;
    TapeForward f = forward(tape, seq, hook);
    const int next = argmax_token(f.logits.value().row(seq.size() - 1));
    if (next == eos_token) break;
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

}  // namespace paving
