// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "paving/backbone.hpp"
#include "paving/task.hpp"

namespace paving {

struct PretrainOptions {
  int epochs = 6;
  double lr = 3e-3;
  std::size_t batch = 16;
  double refusal_floor = 0.90;   // edit and harmful-keep eval prompts
  double benign_ceiling = 0.05;  // benign eval prompts
  std::uint64_t seed = 5;
};

struct CorpusExample {
  Tokens prompt;
  Tokens continuation;
};

struct PretrainEpoch {
  int epoch = 0;
  double loss = 0.0;
  double edit_refusal = 0.0;
  double harmful_refusal = 0.0;
  double benign_refusal = 0.0;
  double teacher_reframe = 0.0;  // teacher prompts opening with the reframe marker
};

struct PretrainReport {
  std::vector<PretrainEpoch> epochs;
  std::string checksum;
};

/// Flagged prompts map to the refusal continuation, benign prompts to their
/// topic phrase, and teacher versions of edit prompts to the edit target.
std::vector<CorpusExample> build_corpus(const Vocabulary& vocab, const std::vector<PromptRecord>& train);

/// Fraction of prompts whose first greedy token is the refusal marker.
double first_token_refusal(const Backbone& backbone, const std::vector<const PromptRecord*>& prompts);

/// Trains a fresh backbone on the corpus, then checks the refusal floors on the
/// eval split. Throws ContractViolation with per-bucket rates when they are not met.
Backbone pretrain_backbone(const BackboneConfig& cfg, const Vocabulary& vocab, const TaskSplits& splits,
                           const PretrainOptions& opts, PretrainReport* report = nullptr);

}  // namespace paving
