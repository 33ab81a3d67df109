// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include "paving/pretrain.hpp"

#include <fmt/format.h>

#include <numeric>

#include "paving/errors.hpp"
#include "paving/numerics/adam.hpp"
#include "paving/rng.hpp"

namespace paving {

using num::Tape;
using num::Var;

std::vector<CorpusExample> build_corpus(const Vocabulary& vocab, const std::vector<PromptRecord>& train) {
  std::vector<CorpusExample> out;
  for (const auto& r : train) {
    switch (r.bucket) {
      case Bucket::benign_keep: out.push_back({r.tokens, vocab.benign_continuation(r.tokens.back())}); break;
      case Bucket::harmful_keep: out.push_back({r.tokens, vocab.refusal_continuation()}); break;
      case Bucket::edit:
        out.push_back({r.tokens, vocab.refusal_continuation()});
        out.push_back({vocab.teacher_prompt(r.tokens), *r.edit_target});
        break;
    }
  }
  return out;
}

double first_token_refusal(const Backbone& backbone, const std::vector<const PromptRecord*>& prompts) {
  if (prompts.empty()) return 0.0;
  std::size_t k = 0;
  for (const PromptRecord* r : prompts) {
    const Tokens out = backbone.greedy_decode(r->tokens, 1, nullptr, tok::kEos);
    k += !out.empty() && out.front() == tok::kRefuse;
  }
  return static_cast<double>(k) / static_cast<double>(prompts.size());
}

namespace {

double teacher_reframe_rate(const Backbone& bb, const Vocabulary& vocab, const std::vector<const PromptRecord*>& edits) {
  if (edits.empty()) return 0.0;
  std::size_t k = 0;
  for (const PromptRecord* r : edits) {
    const Tokens out = bb.greedy_decode(vocab.teacher_prompt(r->tokens), 1, nullptr, tok::kEos);
    k += !out.empty() && out.front() == tok::kSafeReframe;
  }
  return static_cast<double>(k) / static_cast<double>(edits.size());
}

}  // namespace

Backbone pretrain_backbone(const BackboneConfig& cfg, const Vocabulary& vocab, const TaskSplits& splits,
                           const PretrainOptions& opts, PretrainReport* report) {
  require_config(cfg.vocab_size == vocab.size(), "pretrain: backbone vocab_size must equal the task vocabulary");
  require_config(opts.epochs >= 1 && opts.batch >= 1 && opts.lr > 0.0, "pretrain: invalid options");
  const std::vector<CorpusExample> corpus = build_corpus(vocab, splits.train);
  require_config(!corpus.empty(), "pretrain: empty corpus");

  BackboneParams params = BackboneParams::init(cfg);
  std::vector<num::Array*> ptrs;
  for (auto& [name, arr] : params.named()) ptrs.push_back(arr);
  num::Adam adam(ptrs, {.lr = opts.lr});
  num::GradAccumulator acc(ptrs);

  const auto eval_edit = select_bucket(splits.eval, Bucket::edit);
  const auto eval_harm = select_bucket(splits.eval, Bucket::harmful_keep);
  const auto eval_benign = select_bucket(splits.eval, Bucket::benign_keep);

  PretrainReport local;
  Rng rng(opts.seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch) {
      const std::size_t end = std::min(order.size(), start + opts.batch);
      acc.reset();
      for (std::size_t i = start; i < end; ++i) {
        const CorpusExample& ex = corpus[order[i]];
        Tokens seq = ex.prompt;
        seq.insert(seq.end(), ex.continuation.begin(), ex.continuation.end());
        Tape tape;
        const TapeForward f = run_decoder(tape, cfg, params, seq, nullptr, /*trainable=*/true);
        const auto pos = step_positions(ex.prompt.size(), ex.continuation.size());
        Var loss = num::cross_entropy(num::gather_rows(f.logits, pos), ex.continuation);
        epoch_loss += loss.value().item();
        tape.backward(loss);
        acc.add(tape);
      }
      acc.scale(1.0 / static_cast<double>(end - start));
      acc.max_abs();
      adam.step(acc.grads());
    }
    const Backbone snapshot(cfg, params);
    PretrainEpoch row;
    row.epoch = epoch;
    row.loss = epoch_loss / static_cast<double>(corpus.size());
    row.edit_refusal = first_token_refusal(snapshot, eval_edit);
    row.harmful_refusal = first_token_refusal(snapshot, eval_harm);
    row.benign_refusal = first_token_refusal(snapshot, eval_benign);
    row.teacher_reframe = teacher_reframe_rate(snapshot, vocab, eval_edit);
    local.epochs.push_back(row);
  }

  Backbone out(cfg, std::move(params));
  local.checksum = out.checksum();
  const PretrainEpoch& last = local.epochs.back();
  if (report != nullptr) *report = local;
  require(last.edit_refusal >= opts.refusal_floor && last.harmful_refusal >= opts.refusal_floor &&
              last.benign_refusal <= opts.benign_ceiling,
          fmt::format("pretrain: refusal floors not met after {} epochs (edit {:.3f}, harmful {:.3f}, benign {:.3f}, "
                      "loss {:.4f}); raise pretrain epochs or learning rate",
                      last.epoch, last.edit_refusal, last.harmful_refusal, last.benign_refusal, last.loss));
  return out;
}

}  // namespace paving
