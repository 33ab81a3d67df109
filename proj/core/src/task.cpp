// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include "paving/task.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "paving/errors.hpp"
#include "paving/rng.hpp"

namespace paving {

using nlohmann::json;

Vocabulary::Vocabulary(int size) : size_(size) {
  require_config(size >= kMinSize, fmt::format("vocabulary: size {} is below the minimum {}", size, kMinSize));
  int next = tok::kReserved;
  auto take = [&](std::vector<int>& dst, int n) {
    for (int i = 0; i < n; ++i) dst.push_back(next++);
  };
  take(refusal_words_, kRefusalWords);
  take(edit_topics_, kEditTopics);
  take(harmful_topics_, kHarmfulTopics);
  take(benign_topics_, kBenignTopics);
  take(fillers_, kFillers);
  take(phrase_words_, size - next);
}

Tokens Vocabulary::phrase(int topic) const {
  const int first = edit_topics_.front();
  const int last = benign_topics_.back();
  require(topic >= first && topic <= last, fmt::format("phrase: {} is not a topic token", topic));
  const auto idx = static_cast<std::size_t>(topic - first);
  const std::size_t n = phrase_words_.size();
  const std::size_t a = idx % n;
  const std::size_t b = (5 * idx + idx / n + 3) % n;
  return {phrase_words_[a], phrase_words_[b == a ? (b + 1) % n : b]};
}

Tokens Vocabulary::benign_continuation(int topic) const {
  Tokens t = phrase(topic);
  t.push_back(tok::kEos);
  return t;
}

Tokens Vocabulary::refusal_continuation() const {
  Tokens t{tok::kRefuse};
  t.insert(t.end(), refusal_words_.begin(), refusal_words_.end());
  t.push_back(tok::kEos);
  return t;
}

Tokens Vocabulary::edit_target(int topic) const {
  Tokens t{tok::kSafeReframe};
  const Tokens p = phrase(topic);
  t.insert(t.end(), p.begin(), p.end());
  t.push_back(tok::kEos);
  return t;
}

Tokens Vocabulary::teacher_prompt(const Tokens& prompt) const {
  Tokens t = prompt;
  t.push_back(tok::kAskFrame);
  return t;
}

namespace {

constexpr const char* kSpecialNames[tok::kReserved] = {"<pad>",     "<bos>",  "<eos>", "<refuse>",
                                                       "<reframe>", "<harm>", "<ask>"};

bool in(const std::vector<int>& v, int id) { return std::find(v.begin(), v.end(), id) != v.end(); }

}  // namespace

std::string Vocabulary::token_name(int id) const {
  require(id >= 0 && id < size_, fmt::format("token id {} out of range", id));
  if (id < tok::kReserved) return kSpecialNames[id];
  if (in(refusal_words_, id)) return fmt::format("r{}", id - refusal_words_.front());
  if (in(edit_topics_, id)) return fmt::format("e{}", id - edit_topics_.front());
  if (in(harmful_topics_, id)) return fmt::format("h{}", id - harmful_topics_.front());
  if (in(benign_topics_, id)) return fmt::format("b{}", id - benign_topics_.front());
  if (in(fillers_, id)) return fmt::format("f{}", id - fillers_.front());
  return fmt::format("w{}", id - phrase_words_.front());
}

int Vocabulary::token_id(const std::string& name) const {
  for (int i = 0; i < tok::kReserved; ++i)
    if (name == kSpecialNames[i]) return i;
  if (name.size() >= 2) {
    const std::vector<int>* group = nullptr;
    switch (name[0]) {
      case 'r': group = &refusal_words_; break;
      case 'e': group = &edit_topics_; break;
      case 'h': group = &harmful_topics_; break;
      case 'b': group = &benign_topics_; break;
      case 'f': group = &fillers_; break;
      case 'w': group = &phrase_words_; break;
      default: break;
    }
    const std::string digits = name.substr(1);
    if (group != nullptr && std::all_of(digits.begin(), digits.end(), ::isdigit) && digits.size() <= 4) {
      const auto k = static_cast<std::size_t>(std::stoi(digits));
      if (k < group->size()) return (*group)[k];
    }
  }
  throw ConfigError("unknown token '" + name + "'");
}

Tokens Vocabulary::tokenize(const std::string& text) const {
  std::istringstream in(text);
  Tokens out;
  for (std::string word; in >> word;) out.push_back(token_id(word));
  return out;
}

std::string Vocabulary::detokenize(const Tokens& tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += token_name(tokens[i]);
  }
  return out;
}

void PromptRecord::validate(int vocab_size) const {
  require_config(!id.empty(), "prompt record: empty id");
  auto check_tokens = [&](const Tokens& t, const char* field) {
    for (int v : t)
      require_config(v >= 0 && v < vocab_size,
                     fmt::format("prompt record '{}': {} token {} outside vocabulary", id, field, v));
  };
  check_tokens(tokens, "prompt");
  require_config(edit_target.has_value() == (bucket == Bucket::edit),
                 fmt::format("prompt record '{}': edit_target must be present iff bucket is edit", id));
  if (edit_target) check_tokens(*edit_target, "edit_target");
  if (anti_refusal_anchor) check_tokens(*anti_refusal_anchor, "anti_refusal_anchor");
}

namespace {

std::vector<Tokens> enumerate_prompts(const Vocabulary& v, Bucket bucket) {
  std::vector<Tokens> out;
  const auto& f = v.fillers();
  if (bucket == Bucket::benign_keep) {
    for (int topic : v.benign_topics())
      for (int a : f)
        for (int b : f)
          for (int c : f) out.push_back({tok::kBos, a, b, c, topic});
    return out;
  }
  const auto& topics = bucket == Bucket::edit ? v.edit_topics() : v.harmful_topics();
  for (int topic : topics)
    for (int a : f)
      for (int b : f) out.push_back({tok::kBos, tok::kHarmFlag, a, b, topic});
  return out;
}

}  // namespace

TaskSplits generate_task(const Vocabulary& vocab, std::uint64_t seed, const TaskSizes& train, const TaskSizes& eval) {
  require_config(train.edit >= 1 && train.benign >= 1 && train.harmful >= 1 && eval.edit >= 1 && eval.benign >= 1 &&
                     eval.harmful >= 1,
                 "generate_task: every bucket needs at least one prompt per split");
  Rng rng(seed);
  TaskSplits out;
  const Bucket order[3] = {Bucket::edit, Bucket::benign_keep, Bucket::harmful_keep};
  for (Bucket b : order) {
    std::vector<Tokens> pool = enumerate_prompts(vocab, b);
    const std::size_t n_train = b == Bucket::edit ? train.edit : b == Bucket::benign_keep ? train.benign : train.harmful;
    const std::size_t n_eval = b == Bucket::edit ? eval.edit : b == Bucket::benign_keep ? eval.benign : eval.harmful;
    require_config(n_train + n_eval <= pool.size(),
                   fmt::format("generate_task: {} topic subset yields {} distinct prompts, {} requested",
                               to_string(b), pool.size(), n_train + n_eval));
    Rng local = rng.fork(static_cast<std::uint64_t>(b) + 1);
    local.shuffle(pool);
    auto make = [&](const Tokens& t, const std::string& split, std::size_t i) {
      PromptRecord r;
      r.id = fmt::format("{}-{}-{:04d}", split, to_string(b), i);
      r.bucket = b;
      r.tokens = t;
      if (b == Bucket::edit) {
        r.edit_target = vocab.edit_target(t.back());
        r.anti_refusal_anchor = vocab.anti_refusal_anchor();
      }
      return r;
    };
    for (std::size_t i = 0; i < n_train; ++i) out.train.push_back(make(pool[i], "train", i));
    for (std::size_t i = 0; i < n_eval; ++i) out.eval.push_back(make(pool[n_train + i], "eval", i));
  }
  return out;
}

std::vector<const PromptRecord*> select_bucket(const std::vector<PromptRecord>& records, Bucket bucket) {
  std::vector<const PromptRecord*> out;
  for (const auto& r : records)
    if (r.bucket == bucket) out.push_back(&r);
  return out;
}

namespace {

Tokens tokens_field(const json& j, const char* field, const Vocabulary& vocab, std::size_t line) {
  const json& v = j.at(field);
  if (v.is_string()) return vocab.tokenize(v.get<std::string>());
  require_config(v.is_array(), fmt::format("line {}: field '{}' must be a token list or text", line, field));
  Tokens out;
  for (const json& e : v) {
    require_config(e.is_number_integer(), fmt::format("line {}: field '{}' holds a non-integer token", line, field));
    out.push_back(e.get<int>());
  }
  return out;
}

}  // namespace

std::vector<PromptRecord> parse_jsonl(const std::string& text, const Vocabulary& vocab) {
  std::vector<PromptRecord> out;
  std::set<std::string> ids;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      require_config(j.is_object(), "record is not an object");
      for (const auto& [key, value] : j.items()) {
        (void)value;
        require_config(key == "id" || key == "bucket" || key == "prompt" || key == "edit_target" ||
                           key == "anti_refusal_anchor",
                       "unknown field '" + key + "'");
      }
      PromptRecord r;
      require_config(j.contains("id") && j.at("id").is_string(), "field 'id' must be a string");
      require_config(j.contains("bucket") && j.at("bucket").is_string(), "field 'bucket' must be a string");
      require_config(j.contains("prompt"), "field 'prompt' is required");
      r.id = j.at("id").get<std::string>();
      r.bucket = parse_bucket(j.at("bucket").get<std::string>());
      r.tokens = tokens_field(j, "prompt", vocab, line_no);
      if (j.contains("edit_target")) r.edit_target = tokens_field(j, "edit_target", vocab, line_no);
      if (j.contains("anti_refusal_anchor"))
        r.anti_refusal_anchor = tokens_field(j, "anti_refusal_anchor", vocab, line_no);
      r.validate(vocab.size());
      require_config(ids.insert(r.id).second, "duplicate id '" + r.id + "'");
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("jsonl line {}: {}", line_no, e.what()));
    } catch (const ConfigError& e) {
      const std::string what = e.what();
      if (what.rfind("jsonl line", 0) == 0) throw;
      throw ConfigError(fmt::format("jsonl line {}: {}", line_no, what));
    }
  }
  return out;
}

std::vector<PromptRecord> read_jsonl(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  require_config(in.good(), "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_jsonl(ss.str(), vocab);
}

std::string to_jsonl(const std::vector<PromptRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    json j;
    j["id"] = r.id;
    j["bucket"] = to_string(r.bucket);
    j["prompt"] = r.tokens;
    if (r.edit_target) j["edit_target"] = *r.edit_target;
    if (r.anti_refusal_anchor) j["anti_refusal_anchor"] = *r.anti_refusal_anchor;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<PromptRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require_config(out.good(), "cannot write " + path.string());
  out << to_jsonl(records);
}

}  // namespace paving
