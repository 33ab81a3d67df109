// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include "paving/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "paving/checksum.hpp"
#include "paving/errors.hpp"

namespace paving {

using nlohmann::json;

void RunConfig::validate() const {
  require_config(vocab_size == backbone.vocab_size, "config: vocab_size must equal backbone.vocab_size");
  require_config(train_sizes.edit >= 1 && train_sizes.benign >= 1 && train_sizes.harmful >= 1,
                 "config: every training bucket needs at least one prompt");
  require_config(eval_sizes.edit >= 1 && eval_sizes.benign >= 1 && eval_sizes.harmful >= 1,
                 "config: every evaluation bucket needs at least one prompt");
  backbone.validate();
  controller.validate(backbone.n_layers, backbone.width);
  weights.validate();
  schedule.validate();
  require_config(pretrain.epochs >= 1 && pretrain.batch >= 1 && pretrain.lr > 0.0, "config: bad pretraining options");
  require_config(veto.l2_weight >= 0.0 && veto.max_iter >= 1, "config: bad veto settings");
  require_config(judge == "desk", "config: unknown judge '" + judge + "' (available: desk)");
  require_config(!baselines.scales.empty(), "config: baseline scale grid is empty");
  for (double s : baselines.scales) require_config(s > 0.0, "config: baseline scales must be positive");
  require_config(baselines.benign_floor >= 0.0 && baselines.benign_floor <= 1.0, "config: benign floor outside [0, 1]");
}

RunConfig desk_defaults() {
  RunConfig c;
  c.controller.scale = 1.0;
  c.controller.gain_clip = 0.5;
  return c;
}

void apply_seed(RunConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.backbone.seed = seed + 6;
  cfg.pretrain.seed = seed + 4;
  cfg.controller.seed = seed + 10;
  cfg.schedule.seed = seed + 12;
}

namespace {

// Reader that records which keys it consumed so leftovers can be rejected.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    require_config(j_.is_object(), where_ + ": expected an object");
  }
  ~Reader() = default;

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      require_config(seen_.count(k) > 0, where_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json sizes_json(const TaskSizes& s) { return {{"edit", s.edit}, {"benign", s.benign}, {"harmful", s.harmful}}; }

TaskSizes read_sizes(const json& j, const std::string& where) {
  TaskSizes s;
  Reader r(j, where);
  r.get("edit", s.edit);
  r.get("benign", s.benign);
  r.get("harmful", s.harmful);
  r.finish();
  return s;
}

}  // namespace

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["vocab_size"] = c.vocab_size;
  j["train_sizes"] = sizes_json(c.train_sizes);
  j["eval_sizes"] = sizes_json(c.eval_sizes);
  const BackboneConfig& b = c.backbone;
  j["backbone"] = {{"vocab_size", b.vocab_size}, {"width", b.width},       {"n_layers", b.n_layers},
                   {"n_heads", b.n_heads},       {"max_seq_len", b.max_seq_len}, {"ffn_mult", b.ffn_mult},
                   {"seed", b.seed}};
  const PretrainOptions& p = c.pretrain;
  j["pretrain"] = {{"epochs", p.epochs},
                   {"lr", p.lr},
                   {"batch", p.batch},
                   {"refusal_floor", p.refusal_floor},
                   {"benign_ceiling", p.benign_ceiling},
                   {"seed", p.seed}};
  const ControllerConfig& k = c.controller;
  j["controller"] = {{"experts", k.experts},
                     {"bottleneck", k.bottleneck},
                     {"router_hidden", k.router_hidden},
                     {"scale", k.scale},
                     {"route_layers", k.route_layers},
                     {"intervention_layers", k.intervention_layers},
                     {"window_centers", k.window_centers},
                     {"window_widths", k.window_widths},
                     {"gain_clip", k.gain_clip},
                     {"expert_init_std", k.expert_init_std},
                     {"uniform_mixture", k.uniform_mixture},
                     {"seed", k.seed}};
  const LossWeights& w = c.weights;
  j["weights"] = {{"ce", w.ce},
                  {"kl", w.kl},
                  {"trajectory", w.trajectory},
                  {"gate", w.gate},
                  {"preservation", w.preservation},
                  {"warmup_edit", w.warmup_edit},
                  {"warmup_benign", w.warmup_benign},
                  {"harmful_preservation", w.harmful_preservation},
                  {"pair_margin", w.pair_margin},
                  {"hard_negatives", w.hard_negatives},
                  {"pair", w.pair},
                  {"l2", w.l2}};
  const TrainSchedule& s = c.schedule;
  j["schedule"] = {{"gate_epochs", s.gate_epochs},
                   {"warmup_epochs", s.warmup_epochs},
                   {"stage1_epochs", s.stage1_epochs},
                   {"stage2_epochs", s.stage2_epochs},
                   {"stage3_epochs", s.stage3_epochs},
                   {"horizon", s.horizon},
                   {"stage1_steps", s.stage1_steps},
                   {"gate_lr", s.gate_lr},
                   {"warmup_lr", s.warmup_lr},
                   {"fit_lr", s.fit_lr},
                   {"warmup", s.warmup},
                   {"top_k", s.top_k},
                   {"target_source", to_string(s.target_source)},
                   {"target_temperature", s.target_temperature},
                   {"filter_base_refused", s.filter_base_refused},
                   {"calibration_fraction", s.calibration_fraction},
                   {"fit_step_budget", s.fit_step_budget},
                   {"decode_len", s.decode_len},
                   {"seed", s.seed}};
  j["veto"] = {{"enabled", c.veto.enabled},
               {"l2_weight", c.veto.l2_weight},
               {"max_iter", c.veto.max_iter},
               {"mode", to_string(c.veto.mode)}};
  j["judge"] = c.judge;
  j["oracle"] = c.oracle;
  j["trajectory"] = c.trajectory;
  j["baselines"] = {{"enabled", c.baselines.enabled},
                    {"scales", c.baselines.scales},
                    {"benign_floor", c.baselines.benign_floor}};
  j["ablation_budget"] = c.ablation_budget;
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig c = desk_defaults();
  Reader r(j, "config");
  r.get("seed", c.seed);
  r.get("vocab_size", c.vocab_size);
  if (const json* s = r.sub("train_sizes")) c.train_sizes = read_sizes(*s, r.path("train_sizes"));
  if (const json* s = r.sub("eval_sizes")) c.eval_sizes = read_sizes(*s, r.path("eval_sizes"));
  if (const json* s = r.sub("backbone")) {
    Reader b(*s, r.path("backbone"));
    b.get("vocab_size", c.backbone.vocab_size);
    b.get("width", c.backbone.width);
    b.get("n_layers", c.backbone.n_layers);
    b.get("n_heads", c.backbone.n_heads);
    b.get("max_seq_len", c.backbone.max_seq_len);
    b.get("ffn_mult", c.backbone.ffn_mult);
    b.get("seed", c.backbone.seed);
    b.finish();
  }
  if (const json* s = r.sub("pretrain")) {
    Reader p(*s, r.path("pretrain"));
    p.get("epochs", c.pretrain.epochs);
    p.get("lr", c.pretrain.lr);
    p.get("batch", c.pretrain.batch);
    p.get("refusal_floor", c.pretrain.refusal_floor);
    p.get("benign_ceiling", c.pretrain.benign_ceiling);
    p.get("seed", c.pretrain.seed);
    p.finish();
  }
  if (const json* s = r.sub("controller")) {
    Reader k(*s, r.path("controller"));
    k.get("experts", c.controller.experts);
    k.get("bottleneck", c.controller.bottleneck);
    k.get("router_hidden", c.controller.router_hidden);
    k.get("scale", c.controller.scale);
    k.get("route_layers", c.controller.route_layers);
    k.get("intervention_layers", c.controller.intervention_layers);
    k.get("window_centers", c.controller.window_centers);
    k.get("window_widths", c.controller.window_widths);
    k.get("gain_clip", c.controller.gain_clip);
    k.get("expert_init_std", c.controller.expert_init_std);
    k.get("uniform_mixture", c.controller.uniform_mixture);
    k.get("seed", c.controller.seed);
    k.finish();
  }
  if (const json* s = r.sub("weights")) {
    Reader w(*s, r.path("weights"));
    w.get("ce", c.weights.ce);
    w.get("kl", c.weights.kl);
    w.get("trajectory", c.weights.trajectory);
    w.get("gate", c.weights.gate);
    w.get("preservation", c.weights.preservation);
    w.get("warmup_edit", c.weights.warmup_edit);
    w.get("warmup_benign", c.weights.warmup_benign);
    w.get("harmful_preservation", c.weights.harmful_preservation);
    w.get("pair_margin", c.weights.pair_margin);
    w.get("hard_negatives", c.weights.hard_negatives);
    w.get("pair", c.weights.pair);
    w.get("l2", c.weights.l2);
    w.finish();
  }
  if (const json* s = r.sub("schedule")) {
    Reader t(*s, r.path("schedule"));
    TrainSchedule& sc = c.schedule;
    t.get("gate_epochs", sc.gate_epochs);
    t.get("warmup_epochs", sc.warmup_epochs);
    t.get("stage1_epochs", sc.stage1_epochs);
    t.get("stage2_epochs", sc.stage2_epochs);
    t.get("stage3_epochs", sc.stage3_epochs);
    t.get("horizon", sc.horizon);
    t.get("stage1_steps", sc.stage1_steps);
    t.get("gate_lr", sc.gate_lr);
    t.get("warmup_lr", sc.warmup_lr);
    t.get("fit_lr", sc.fit_lr);
    t.get("warmup", sc.warmup);
    t.get("top_k", sc.top_k);
    std::string source = to_string(sc.target_source);
    t.get("target_source", source);
    sc.target_source = parse_edit_target_source(source);
    t.get("target_temperature", sc.target_temperature);
    t.get("filter_base_refused", sc.filter_base_refused);
    t.get("calibration_fraction", sc.calibration_fraction);
    t.get("fit_step_budget", sc.fit_step_budget);
    t.get("decode_len", sc.decode_len);
    t.get("seed", sc.seed);
    t.finish();
  }
  if (const json* s = r.sub("veto")) {
    Reader v(*s, r.path("veto"));
    v.get("enabled", c.veto.enabled);
    v.get("l2_weight", c.veto.l2_weight);
    v.get("max_iter", c.veto.max_iter);
    std::string mode = to_string(c.veto.mode);
    v.get("mode", mode);
    c.veto.mode = parse_threshold_mode(mode);
    v.finish();
  }
  r.get("judge", c.judge);
  r.get("oracle", c.oracle);
  r.get("trajectory", c.trajectory);
  if (const json* s = r.sub("baselines")) {
    Reader b(*s, r.path("baselines"));
    b.get("enabled", c.baselines.enabled);
    b.get("scales", c.baselines.scales);
    b.get("benign_floor", c.baselines.benign_floor);
    b.finish();
  }
  r.get("ablation_budget", c.ablation_budget);
  r.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require_config(in.good(), "cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::string canonical_json(const RunConfig& cfg) {
  // nlohmann::json objects are std::map backed, so keys dump sorted.
  return to_json(cfg).dump();
}

std::string config_digest(const RunConfig& cfg) { return sha256_hex(canonical_json(cfg)); }

}  // namespace paving
