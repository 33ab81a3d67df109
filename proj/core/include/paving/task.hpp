// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "paving/backbone.hpp"
#include "paving/bucket.hpp"

namespace paving {

/// Reserved ids shared by every synthetic vocabulary.
namespace tok {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kRefuse = 3;
inline constexpr int kSafeReframe = 4;
inline constexpr int kHarmFlag = 5;
inline constexpr int kAskFrame = 6;  // marks a teacher prompt
inline constexpr int kReserved = 7;
}  // namespace tok

/// Token layout of the synthetic three-bucket task.
class Vocabulary {
 public:
  static constexpr int kRefusalWords = 3;
  static constexpr int kEditTopics = 8;
  static constexpr int kHarmfulTopics = 8;
  static constexpr int kBenignTopics = 12;
  static constexpr int kFillers = 12;
  static constexpr int kMinPhraseWords = 8;
  static constexpr int kMinSize =
      tok::kReserved + kRefusalWords + kEditTopics + kHarmfulTopics + kBenignTopics + kFillers + kMinPhraseWords;

  explicit Vocabulary(int size = 64);

  int size() const { return size_; }
  const std::vector<int>& refusal_words() const { return refusal_words_; }
  const std::vector<int>& edit_topics() const { return edit_topics_; }
  const std::vector<int>& harmful_topics() const { return harmful_topics_; }
  const std::vector<int>& benign_topics() const { return benign_topics_; }
  const std::vector<int>& fillers() const { return fillers_; }
  const std::vector<int>& phrase_words() const { return phrase_words_; }

  /// Two content tokens determined by a topic token.
  Tokens phrase(int topic) const;
  Tokens benign_continuation(int topic) const;
  Tokens refusal_continuation() const;
  Tokens edit_target(int topic) const;
  Tokens anti_refusal_anchor() const { return {tok::kSafeReframe}; }
  Tokens teacher_prompt(const Tokens& prompt) const;

  std::string token_name(int id) const;
  /// Inverse of token_name; throws ConfigError for unknown names.
  int token_id(const std::string& name) const;
  /// Whitespace tokenizer over token names.
  Tokens tokenize(const std::string& text) const;
  std::string detokenize(const Tokens& tokens) const;

 private:
  int size_;
  std::vector<int> refusal_words_, edit_topics_, harmful_topics_, benign_topics_, fillers_, phrase_words_;
};

struct PromptRecord {
  std::string id;
  Bucket bucket = Bucket::benign_keep;
  Tokens tokens;
  std::optional<Tokens> edit_target;
  std::optional<Tokens> anti_refusal_anchor;

  /// Checks the edit-target invariant and token ranges.
  void validate(int vocab_size) const;
  friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

struct TaskSizes {
  std::size_t edit = 200;
  std::size_t benign = 200;
  std::size_t harmful = 48;
  std::size_t total() const { return edit + benign + harmful; }
};

struct TaskSplits {
  std::vector<PromptRecord> train;
  std::vector<PromptRecord> eval;
};

/// Disjoint train/eval splits. Harm-flagged prompts end in an edit or harmful
/// topic; benign prompts carry no flag.
TaskSplits generate_task(const Vocabulary& vocab, std::uint64_t seed, const TaskSizes& train, const TaskSizes& eval);

std::vector<const PromptRecord*> select_bucket(const std::vector<PromptRecord>& records, Bucket bucket);

/// Newline-delimited JSON records: id, bucket, prompt (id list or text),
/// optional edit_target and anti_refusal_anchor.
std::vector<PromptRecord> read_jsonl(const std::filesystem::path& path, const Vocabulary& vocab);
std::vector<PromptRecord> parse_jsonl(const std::string& text, const Vocabulary& vocab);
std::string to_jsonl(const std::vector<PromptRecord>& records);
void write_jsonl(const std::filesystem::path& path, const std::vector<PromptRecord>& records);

}  // namespace paving
