// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include "paving/training.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "paving/errors.hpp"
#include "paving/numerics/adam.hpp"
#include "paving/rng.hpp"
#include "paving/veto.hpp"

namespace paving {

using num::Array;
using num::Tape;
using num::Var;

void LossWeights::validate() const {
  for (double w : {ce, kl, trajectory, gate, preservation, warmup_edit, warmup_benign, harmful_preservation, pair_margin,
                   pair, l2}) {
    require_config(std::isfinite(w) && w >= 0.0, "loss weights must be finite and non-negative");
  }
  require_config(hard_negatives >= 1, "loss weights: hard_negatives must be at least 1");
}

std::string to_string(EditTargetSource s) { return s == EditTargetSource::teacher ? "teacher" : "one_hot"; }

EditTargetSource parse_edit_target_source(const std::string& name) {
  if (name == "teacher") return EditTargetSource::teacher;
  if (name == "one_hot") return EditTargetSource::one_hot;
  throw ConfigError("unknown edit target source '" + name + "' (expected teacher or one_hot)");
}

void TrainSchedule::validate() const {
  for (int e : {gate_epochs, warmup_epochs, stage1_epochs, stage2_epochs, stage3_epochs}) {
    require_config(e >= 0, "schedule: epoch counts must be non-negative");
  }
  require_config(horizon >= 1, "schedule: trace horizon must be at least 1");
  require_config(stage1_steps >= 1 && stage1_steps <= horizon, "schedule: stage-1 step cap must lie in [1, horizon]");
  for (double lr : {gate_lr, warmup_lr, fit_lr}) require_config(lr > 0.0 && std::isfinite(lr), "schedule: bad learning rate");
  require_config(top_k >= 1, "schedule: top_k must be at least 1");
  require_config(target_temperature > 0.0, "schedule: target temperature must be positive");
  require_config(calibration_fraction > 0.0 && calibration_fraction <= 1.0,
                 "schedule: calibration fraction must lie in (0, 1]");
  require_config(decode_len >= 1, "schedule: decode length must be at least 1");
}

namespace {

Tokens truncated(const Tokens& t, std::size_t n) { return Tokens(t.begin(), t.begin() + std::min(t.size(), n)); }

/// Rows of `a` at `rows`.
Array take_rows(const Array& a, std::span<const std::size_t> rows) {
  Array out(rows.size(), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = a.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Array head_rows(const Array& a, std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return take_rows(a, rows);
}

std::vector<Array> states_at(const ResidualTrace& trace, std::span<const std::size_t> pos) {
  std::vector<Array> out;
  out.reserve(trace.states.size());
  for (const Array& s : trace.states) out.push_back(take_rows(s, pos));
  return out;
}

Tokens teacher_input(const Tokens& prompt, const Tokens& continuation, std::size_t steps) {
  Tokens seq = prompt;
  seq.insert(seq.end(), continuation.begin(), continuation.begin() + static_cast<std::ptrdiff_t>(steps - 1));
  return seq;
}

void check_finite_loss(double v, const std::string& stage, int epoch, const std::string& id) {
  if (!std::isfinite(v)) {
    throw NumericError(fmt::format("{}: non-finite loss at epoch {} on prompt '{}'", stage, epoch, id));
  }
}

}  // namespace

Tokens base_continuation(const Backbone& backbone, const Tokens& prompt, std::size_t horizon) {
  Tokens out = backbone.greedy_decode(prompt, horizon, nullptr, tok::kEos);
  if (out.size() < horizon && prompt.size() + out.size() < static_cast<std::size_t>(backbone.config().max_seq_len)) {
    out.push_back(tok::kEos);
  }
  if (out.empty()) out.push_back(tok::kEos);
  return out;
}

FeatureCache build_feature_cache(const Backbone& backbone, const Vocabulary& vocab,
                                 const std::vector<PromptRecord>& records, const std::vector<int>& route_layers,
                                 const TrainSchedule& schedule) {
  schedule.validate();
  FeatureCache cache;
  cache.horizon = schedule.horizon;
  cache.top_k = schedule.top_k;
  cache.route_layers = route_layers;
  for (const PromptRecord& r : records) {
    r.validate(vocab.size());
    const ResidualTrace prompt_trace = backbone.forward(r.tokens);
    Array z = boundary_feature(prompt_trace, route_layers);
    if (r.bucket == Bucket::edit) {
      require_config(r.edit_target.has_value() && r.anti_refusal_anchor.has_value(),
                     "feature cache: edit prompt '" + r.id + "' is missing its edit target or anchor");
      if (schedule.filter_base_refused) {
        const int first = argmax_token(prompt_trace.step_logits.row(r.tokens.size() - 1));
        if (first != tok::kRefuse) {
          cache.filtered_edits.push_back(r.id);
          continue;
        }
      }
      EditExample ex;
      ex.id = r.id;
      ex.prompt = r.tokens;
      ex.target = truncated(*r.edit_target, schedule.horizon);
      ex.anchor = truncated(*r.anti_refusal_anchor, schedule.horizon);
      ex.z = std::move(z);
      const std::size_t n = ex.target.size();
      const ResidualTrace base = backbone.teacher_forced_trace(ex.prompt, ex.target, nullptr, schedule.horizon);
      ex.base_states = states_at(base, step_positions(ex.prompt.size(), n));
      const Tokens teacher = vocab.teacher_prompt(ex.prompt);
      const ResidualTrace anchor = backbone.teacher_forced_trace(teacher, ex.target, nullptr, schedule.horizon);
      ex.anchor_states = states_at(anchor, step_positions(teacher.size(), n));
      ex.target_probs = Array(n, static_cast<std::size_t>(vocab.size()));
      for (std::size_t t = 0; t < n; ++t) {
        if (schedule.target_source == EditTargetSource::one_hot) {
          ex.target_probs(t, static_cast<std::size_t>(ex.target[t])) = 1.0;
          continue;
        }
        std::vector<double> scaled(anchor.step_logits.row(t).begin(), anchor.step_logits.row(t).end());
        for (double& v : scaled) v /= schedule.target_temperature;
        const auto p = num::softmax(scaled);
        std::copy(p.begin(), p.end(), ex.target_probs.row(t).begin());
      }
      cache.edits.push_back(std::move(ex));
      continue;
    }
    KeepExample ex;
    ex.id = r.id;
    ex.bucket = r.bucket;
    ex.prompt = r.tokens;
    ex.z = std::move(z);
    ex.continuation = base_continuation(backbone, r.tokens, schedule.horizon);
    ex.reference = backbone.cache_topk_reference(ex.prompt, ex.continuation, schedule.top_k);
    const ResidualTrace base = backbone.teacher_forced_trace(ex.prompt, ex.continuation, nullptr, schedule.horizon);
    ex.base_probs = Array(base.steps(), base.step_logits.cols());
    for (std::size_t t = 0; t < base.steps(); ++t) {
      const auto p = base.step_probs(t);
      std::copy(p.begin(), p.end(), ex.base_probs.row(t).begin());
    }
    (r.bucket == Bucket::benign_keep ? cache.benign : cache.harmful).push_back(std::move(ex));
  }
  return cache;
}

Array stack_layers(const std::vector<Array>& states, const std::vector<int>& layers, std::size_t steps) {
  require(!states.empty(), "stack_layers: no states");
  const std::size_t d = states.front().cols();
  Array out(layers.size() * steps, d);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Array& s = states.at(static_cast<std::size_t>(layers[i]));
    require(s.rows() >= steps, "stack_layers: fewer cached steps than requested");
    for (std::size_t t = 0; t < steps; ++t) {
      const auto src = s.row(t);
      std::copy(src.begin(), src.end(), out.row(i * steps + t).begin());
    }
  }
  return out;
}

Var trajectory_loss(Tape& tape, Var intervened, const Array& base, const Array& anchor) {
  require(intervened.value().same_shape(base) && base.same_shape(anchor), "trajectory_loss: trace shapes differ");
  Var h0 = tape.constant(base, "H0");
  Var di = num::sub(intervened, h0);
  Var de = num::sub(tape.constant(anchor, "HE"), h0);
  // cosine() returns 0 for a zero-norm side, which makes T = 1 there.
  return num::sub(tape.constant(Array::scalar(1.0)), num::cosine(di, de));
}

Var harmful_pair_penalty(Tape& tape, Var edit_logit, const std::vector<Var>& harmful_logits, double margin) {
  if (harmful_logits.empty()) return tape.constant(Array::scalar(0.0), "pair");
  Var margin_v = tape.constant(Array::scalar(margin));
  Var acc;
  for (Var h : harmful_logits) {
    Var hinge = num::relu(num::sub(margin_v, num::sub(edit_logit, h)));
    acc = acc.valid() ? num::add(acc, hinge) : hinge;
  }
  return num::scale(acc, 1.0 / static_cast<double>(harmful_logits.size()));
}

namespace {

struct Intervened {
  TapeRoute route;
  TapeForward forward;
  std::vector<std::size_t> positions;
};

/// Forward of prompt + continuation[:steps-1] under the soft-gated controller.
Intervened intervened_forward(Tape& tape, const LossContext& ctx, const Array& z, const Tokens& prompt,
                              const Tokens& continuation, std::size_t steps) {
  Intervened out;
  out.route = route_on_tape(tape, ctx.bound.router, ctx.params.router, z);
  ControllerHook hook(ctx.params, ctx.bound, num::sigmoid(out.route.gate_logit), out.route.mixture);
  out.forward = ctx.backbone.forward(tape, teacher_input(prompt, continuation, steps), &hook);
  out.positions = step_positions(prompt.size(), steps);
  return out;
}

void add_term(Var& total, Var term, double weight) {
  Var w = num::scale(term, weight);
  total = total.valid() ? num::add(total, w) : w;
}

}  // namespace

Var edit_loss(Tape& tape, const LossContext& ctx, const EditExample& ex, LossTerms* terms) {
  const std::size_t n = std::min(ex.target.size(), ctx.step_cap);
  require(n >= 1, "edit_loss: empty edit target");
  const Intervened run = intervened_forward(tape, ctx, ex.z, ex.prompt, ex.target, n);
  Var logits = num::gather_rows(run.forward.logits, run.positions);
  const LossWeights& w = ctx.weights;
  Var total = tape.constant(Array::scalar(0.0));
  LossTerms local;
  if (w.ce > 0.0) {
    Var ce = num::cross_entropy(logits, std::span<const int>(ex.target.data(), n));
    local.ce = ce.value().item();
    add_term(total, ce, w.ce);
  }
  if (w.kl > 0.0) {
    Var kl = num::kl_to_logits(head_rows(ex.target_probs, n), logits);
    local.kl = kl.value().item();
    add_term(total, kl, w.kl);
  }
  if (w.trajectory > 0.0) {
    std::vector<Var> rows;
    for (int l : ctx.params.intervention_layers) {
      rows.push_back(num::gather_rows(run.forward.states.at(static_cast<std::size_t>(l)), run.positions));
    }
    Var traj = trajectory_loss(tape, num::concat_rows(rows), stack_layers(ex.base_states, ctx.params.intervention_layers, n),
                               stack_layers(ex.anchor_states, ctx.params.intervention_layers, n));
    local.trajectory = traj.value().item();
    add_term(total, traj, w.trajectory);
  }
  if (w.gate > 0.0) {
    Var g = num::bce_with_logit(run.route.gate_logit, 1.0);
    local.gate = g.value().item();
    add_term(total, g, w.gate);
  }
  local.total = total.value().item();
  if (terms != nullptr) *terms = local;
  return total;
}

Var keep_loss(Tape& tape, const LossContext& ctx, const KeepExample& ex, LossTerms* terms) {
  const std::size_t n = std::min(ex.continuation.size(), ctx.step_cap);
  require(n >= 1 && ex.reference.steps.size() >= n, "keep_loss: top-k cache does not cover the continuation");
  const LossWeights& w = ctx.weights;
  LossTerms local;
  Var total = tape.constant(Array::scalar(0.0));
  const double pres_w = w.preservation * (ex.bucket == Bucket::harmful_keep ? w.harmful_preservation : 1.0);
  TapeRoute route;
  if (pres_w > 0.0) {
    const Intervened run = intervened_forward(tape, ctx, ex.z, ex.prompt, ex.continuation, n);
    route = run.route;
    Var logits = num::gather_rows(run.forward.logits, run.positions);
    Var kl = num::kl_on_support(std::span<const num::SupportDistribution>(ex.reference.steps.data(), n), logits);
    local.preservation = kl.value().item();
    add_term(total, kl, pres_w);
  } else {
    route = route_on_tape(tape, ctx.bound.router, ctx.params.router, ex.z);
  }
  if (w.gate > 0.0) {
    Var g = num::bce_with_logit(route.gate_logit, 0.0);
    local.gate = g.value().item();
    add_term(total, g, w.gate);
  }
  local.total = total.value().item();
  if (terms != nullptr) *terms = local;
  return total;
}

Var l2_penalty(Tape& tape, const BoundController& bound, double weight) {
  Var acc = tape.constant(Array::scalar(0.0));
  if (weight == 0.0) return acc;
  for (Var v : bound.trainable) {
    if (tape.requires_grad(v)) acc = num::add(acc, num::sum_squares(v));
  }
  return num::scale(acc, weight);
}

namespace {

std::vector<Array*> router_gate_params(ControllerParams& p) {
  return {&p.router.w1, &p.router.b1, &p.router.w_gate, &p.router.b_gate};
}

std::vector<Array*> all_params(ControllerParams& p) {
  std::vector<Array*> out;
  for (auto& [name, ptr] : p.named()) out.push_back(ptr);
  return out;
}

std::vector<Array*> warmup_params(ControllerParams& p) {
  std::vector<Array*> out{&p.router.w_mix, &p.router.b_mix};
  for (ExpertParams& e : p.experts) out.insert(out.end(), {&e.w_down, &e.b_down, &e.w_up, &e.b_up});
  return out;
}

/// Adds the L2 penalty of `params` to the gradient, then steps Adam.
void apply_step(num::Adam& adam, num::GradAccumulator& acc, double l2, const std::string& stage) {
  acc.add_l2(l2);
  try {
    acc.max_abs();
  } catch (const NumericError& e) {
    throw NumericError(stage + ": " + e.what());
  }
  adam.step(acc.grads());
}

double l2_value(const std::vector<Array*>& params, double weight) {
  double s = 0.0;
  for (const Array* a : params) {
    for (double v : a->data()) s += v * v;
  }
  return weight * s;
}

}  // namespace

void pretrain_gate(ControllerParams& params, const FeatureCache& cache, const TrainSchedule& schedule, StageLog* log) {
  const std::size_t ne = cache.edits.size(), nb = cache.benign.size(), nh = cache.harmful.size();
  require_config(ne > 0 && nb > 0 && nh > 0,
                 fmt::format("pretrain_gate: every bucket must be represented (edit {}, benign {}, harmful {})", ne, nb, nh));
  std::vector<const Array*> zs;
  std::vector<int> labels;
  std::vector<double> weights;
  const double n = static_cast<double>(ne + nb + nh);
  for (const auto& e : cache.edits) zs.push_back(&e.z), labels.push_back(1), weights.push_back(n / (3.0 * ne));
  for (const auto& e : cache.benign) zs.push_back(&e.z), labels.push_back(0), weights.push_back(n / (3.0 * nb));
  for (const auto& e : cache.harmful) zs.push_back(&e.z), labels.push_back(0), weights.push_back(n / (3.0 * nh));

  // z-score statistics from the training features.
  const std::size_t dim = zs.front()->cols();
  require_config(dim == params.router.input_dim(), "pretrain_gate: feature width does not match the router");
  Array mean(1, dim), sd(1, dim);
  for (const Array* z : zs) {
    for (std::size_t j = 0; j < dim; ++j) mean[j] += (*z)[j] / n;
  }
  for (const Array* z : zs) {
    for (std::size_t j = 0; j < dim; ++j) sd[j] += ((*z)[j] - mean[j]) * ((*z)[j] - mean[j]) / n;
  }
  for (std::size_t j = 0; j < dim; ++j) sd[j] = std::max(std::sqrt(sd[j]), 1e-8);
  params.router.norm_mean = mean;
  params.router.norm_std = sd;

  StageLog local{"gate_pretrain", {}, {}};
  const auto ptrs = router_gate_params(params);
  num::Adam adam(ptrs, {.lr = schedule.gate_lr});
  num::GradAccumulator acc(ptrs);
  constexpr std::size_t kBatch = 8;
  Rng rng(schedule.seed ^ 0x67617465ULL);
  std::vector<std::size_t> order(zs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 1; epoch <= schedule.gate_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += kBatch) {
      const std::size_t end = std::min(order.size(), start + kBatch);
      acc.reset();
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t j = order[i];
        Tape tape;
        BoundController bound = bind_controller(tape, params, true, false);
        TapeRoute r = route_on_tape(tape, bound.router, params.router, *zs[j]);
        Var loss = num::scale(num::bce_with_logit(r.gate_logit, labels[j]), weights[j]);
        epoch_loss += loss.value().item();
        tape.backward(loss);
        acc.add(tape);
      }
      acc.scale(1.0 / static_cast<double>(end - start));
      apply_step(adam, acc, 0.0, "pretrain_gate");
    }
    epoch_loss /= n;
    check_finite_loss(epoch_loss, "pretrain_gate", epoch, "<epoch>");
    local.epoch_loss.push_back(epoch_loss);
  }
  std::size_t correct = 0;
  for (std::size_t j = 0; j < zs.size(); ++j) {
    correct += (route(*zs[j], params.router).gate_logit > 0.0 ? 1 : 0) == labels[j];
  }
  local.metrics["train_accuracy"] = static_cast<double>(correct) / n;
  params.stages.gate_pretrained = true;
  if (log != nullptr) *log = local;
}

Var warmup_edit_loss(Tape& tape, const LossContext& ctx, const EditExample& ex) {
  const std::size_t n = std::min(ex.anchor.size(), ctx.step_cap);
  require_config(n >= 1, "warmup: edit prompt '" + ex.id + "' has an empty anti-refusal anchor");
  const Intervened run = intervened_forward(tape, ctx, ex.z, ex.prompt, ex.anchor, n);
  Var logits = num::gather_rows(run.forward.logits, run.positions);
  return num::cross_entropy(logits, std::span<const int>(ex.anchor.data(), n));
}

Var warmup_benign_loss(Tape& tape, const LossContext& ctx, const KeepExample& ex) {
  const std::size_t n = std::min(ex.continuation.size(), ctx.step_cap);
  const Intervened run = intervened_forward(tape, ctx, ex.z, ex.prompt, ex.continuation, n);
  Var logits = num::gather_rows(run.forward.logits, run.positions);
  return num::kl_to_logits(head_rows(ex.base_probs, n), logits);
}

namespace {

bool budget_spent(const ControllerParams& p, const TrainSchedule& s) {
  return s.fit_step_budget != 0 && p.stages.fit_steps >= s.fit_step_budget;
}

struct Item {
  int kind;  // 0 edit, 1 benign, 2 harmful
  std::size_t index;
};

std::vector<Item> items_of(const FeatureCache& cache, bool edits, bool benign, bool harmful) {
  std::vector<Item> out;
  if (edits) for (std::size_t i = 0; i < cache.edits.size(); ++i) out.push_back({0, i});
  if (benign) for (std::size_t i = 0; i < cache.benign.size(); ++i) out.push_back({1, i});
  if (harmful) for (std::size_t i = 0; i < cache.harmful.size(); ++i) out.push_back({2, i});
  return out;
}

const std::string& item_id(const FeatureCache& c, const Item& it) {
  if (it.kind == 0) return c.edits[it.index].id;
  return (it.kind == 1 ? c.benign : c.harmful)[it.index].id;
}

}  // namespace

void contrastive_warmup(ControllerParams& params, const Backbone& backbone, const FeatureCache& cache,
                        const LossWeights& weights, const TrainSchedule& schedule, StageLog* log) {
  weights.validate();
  require(params.stages.gate_pretrained, "contrastive_warmup: the gate must be pretrained first");
  require_config(!cache.edits.empty() && !cache.benign.empty(), "contrastive_warmup: needs edit prompts and benign keeps");
  StageLog local{"warmup", {}, {}};
  const auto ptrs = warmup_params(params);
  num::Adam adam(ptrs, {.lr = schedule.warmup_lr});
  num::GradAccumulator acc(ptrs);
  Rng rng(schedule.seed ^ 0x7761726dULL);
  std::vector<Item> items = items_of(cache, true, true, false);
  for (int epoch = 1; epoch <= schedule.warmup_epochs; ++epoch) {
    rng.shuffle(items);
    double epoch_loss = 0.0;
    for (const Item& it : items) {
      const double w = it.kind == 0 ? weights.warmup_edit : weights.warmup_benign;
      if (w == 0.0) continue;
      Tape tape;
      BoundController bound = bind_controller(tape, params, true, true);
      const LossContext ctx{backbone, params, bound, weights, schedule.horizon};
      Var loss = num::scale(it.kind == 0 ? warmup_edit_loss(tape, ctx, cache.edits[it.index])
                                         : warmup_benign_loss(tape, ctx, cache.benign[it.index]),
                            w);
      const double v = loss.value().item();
      check_finite_loss(v, "contrastive_warmup", epoch, item_id(cache, it));
      epoch_loss += v;
      tape.backward(loss);
      acc.reset();
      acc.add(tape);
      apply_step(adam, acc, weights.l2, "contrastive_warmup");
    }
    local.epoch_loss.push_back(epoch_loss / static_cast<double>(items.size()));
  }
  params.stages.warmed_up = true;
  if (log != nullptr) *log = local;
}

std::vector<std::size_t> mine_hard_negatives(const ControllerParams& params, const FeatureCache& cache, std::size_t k) {
  std::vector<double> logits;
  for (const KeepExample& h : cache.harmful) logits.push_back(route(h.z, params.router).gate_logit);
  std::vector<std::size_t> idx(logits.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

void supervised_stage(int stage, ControllerParams& params, const Backbone& backbone, const FeatureCache& cache,
                      const LossWeights& weights, const TrainSchedule& schedule, StageLog* log) {
  require(stage >= 1 && stage <= 3, "supervised_stage: stage must be 1, 2 or 3");
  weights.validate();
  require(params.stages.gate_pretrained, "supervised_fit: the gate must be pretrained first");
  require_config(!cache.edits.empty(), "supervised_fit: no edit prompts in the feature cache");
  for (const KeepExample& k : cache.benign) {
    require_config(k.reference.steps.size() == k.continuation.size() && k.reference.k == cache.top_k,
                   "supervised_fit: top-k cache does not match prompt '" + k.id + "'");
  }
  const int epochs = stage == 1 ? schedule.stage1_epochs : stage == 2 ? schedule.stage2_epochs : schedule.stage3_epochs;
  const std::size_t cap = stage == 1 ? schedule.stage1_steps : schedule.horizon;
  const bool pairs = stage == 3 && weights.pair > 0.0 && !cache.harmful.empty();

  StageLog local{fmt::format("stage{}", stage), {}, {}};
  const auto ptrs = all_params(params);
  num::Adam adam(ptrs, {.lr = schedule.fit_lr});
  num::GradAccumulator acc(ptrs);
  Rng rng(schedule.seed ^ (0x73746167ULL + static_cast<std::uint64_t>(stage)));
  std::vector<Item> items = items_of(cache, true, true, true);
  for (int epoch = 1; epoch <= epochs && !budget_spent(params, schedule); ++epoch) {
    rng.shuffle(items);
    const std::vector<std::size_t> negatives =
        pairs ? mine_hard_negatives(params, cache, static_cast<std::size_t>(weights.hard_negatives))
              : std::vector<std::size_t>{};
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (const Item& it : items) {
      if (budget_spent(params, schedule)) break;
      ++params.stages.fit_steps;
      ++seen;
      Tape tape;
      BoundController bound = bind_controller(tape, params, true, true);
      const LossContext ctx{backbone, params, bound, weights, cap};
      Var loss;
      if (it.kind == 0) {
        const EditExample& ex = cache.edits[it.index];
        loss = edit_loss(tape, ctx, ex, nullptr);
        if (pairs) {
          Var a_edit = route_on_tape(tape, bound.router, params.router, ex.z).gate_logit;
          std::vector<Var> a_harm;
          for (std::size_t j : negatives) {
            a_harm.push_back(route_on_tape(tape, bound.router, params.router, cache.harmful[j].z).gate_logit);
          }
          loss = num::add(loss, num::scale(harmful_pair_penalty(tape, a_edit, a_harm, weights.pair_margin), weights.pair));
        }
      } else {
        loss = keep_loss(tape, ctx, (it.kind == 1 ? cache.benign : cache.harmful)[it.index], nullptr);
      }
      const double v = loss.value().item();
      check_finite_loss(v, local.stage, epoch, item_id(cache, it));
      epoch_loss += v;
      tape.backward(loss);
      acc.reset();
      acc.add(tape);
      apply_step(adam, acc, weights.l2, local.stage);
    }
    if (seen > 0) local.epoch_loss.push_back(epoch_loss / static_cast<double>(seen) + l2_value(ptrs, weights.l2));
  }
  if (log != nullptr) *log = local;
}

void supervised_fit(ControllerParams& params, const Backbone& backbone, const FeatureCache& cache,
                    const LossWeights& weights, const TrainSchedule& schedule, TrainingTranscript* transcript) {
  require(params.stages.warmed_up || !schedule.warmup,
          "supervised_fit: contrastive warmup has not run (disable it explicitly to ablate)");
  for (int stage = 1; stage <= 3; ++stage) {
    StageLog log;
    supervised_stage(stage, params, backbone, cache, weights, schedule, &log);
    if (transcript != nullptr) transcript->stages.push_back(std::move(log));
  }
  params.stages.fitted = true;
}

RouteDiagnostics route_diagnostics(std::span<const double> probs, std::span<const int> active,
                                   std::span<const Bucket> buckets) {
  require(probs.size() == active.size() && probs.size() == buckets.size() && !probs.empty(),
          "route_diagnostics: inputs must be non-empty and of equal length");
  std::vector<int> labels;
  for (Bucket b : buckets) labels.push_back(route_label(b));
  RouteDiagnostics d;
  d.brier = brier_score(probs, labels);
  d.ece = expected_calibration_error(probs, labels);
  std::size_t correct = 0;
  std::size_t counts[3] = {0, 0, 0}, on[3] = {0, 0, 0};
  for (std::size_t i = 0; i < probs.size(); ++i) {
    correct += active[i] == labels[i];
    const auto b = static_cast<std::size_t>(buckets[i]);
    ++counts[b];
    on[b] += active[i] != 0;
  }
  auto rate = [&](Bucket b) {
    const auto i = static_cast<std::size_t>(b);
    return counts[i] == 0 ? 0.0 : static_cast<double>(on[i]) / static_cast<double>(counts[i]);
  };
  d.accuracy = static_cast<double>(correct) / static_cast<double>(probs.size());
  d.edit_active = rate(Bucket::edit);
  d.benign_active = rate(Bucket::benign_keep);
  d.harmful_active = rate(Bucket::harmful_keep);
  return d;
}

namespace {

/// Outcomes of one calibration prompt at gamma = 0, 1 and sigma(a).
struct GammaOutcome {
  int refusal = 0;
  double anchor_nll = 0.0;     // edits
  std::vector<double> step_kls;  // keeps
};

struct CalibrationPrompt {
  Bucket bucket;
  double logit;
  GammaOutcome at[3];  // index: 0 -> gamma 0, 1 -> gamma 1, 2 -> sigma(a)
};

double anchor_nll(const Backbone& bb, const Tokens& prompt, const Tokens& anchor, ResidualHook* hook) {
  const ResidualTrace tr = bb.teacher_forced_trace(prompt, anchor, hook, anchor.size());
  double nll = 0.0;
  for (std::size_t t = 0; t < tr.steps(); ++t) {
    const auto lp = num::log_softmax(tr.step_logits.row(t));
    nll -= lp[static_cast<std::size_t>(anchor[t])];
  }
  return nll / static_cast<double>(tr.steps());
}

std::vector<double> keep_step_kls(const Backbone& bb, const KeepExample& ex, ResidualHook* hook) {
  const ResidualTrace tr = bb.teacher_forced_trace(ex.prompt, ex.continuation, hook, ex.continuation.size());
  std::vector<double> out;
  for (std::size_t t = 0; t < tr.steps(); ++t) out.push_back(support_kl(ex.reference.steps[t], tr.step_logits.row(t)));
  return out;
}

int outcome_index(const GatePolicy& p, double logit) {
  switch (p.kind) {
    case GateKind::soft: return 2;
    case GateKind::hard: return logit > p.threshold ? 1 : 0;
    case GateKind::thresholded_soft: return logit > p.threshold ? 2 : 0;
    case GateKind::oracle: break;
  }
  throw ContractViolation("calibrate_gate: the oracle kind is not a deployable candidate");
}

}  // namespace

GateCalibration calibrate_gate(ControllerParams& params, const Backbone& backbone, const FeatureCache& cache,
                               const TrainSchedule& schedule, const Judge& judge, const CalibrationWeights& weights) {
  schedule.validate();
  const std::string experts_before = params.experts_checksum();
  auto take = [&](std::size_t n) {
    return std::max<std::size_t>(std::min<std::size_t>(n, 1), static_cast<std::size_t>(std::ceil(schedule.calibration_fraction * n)));
  };

  std::vector<CalibrationPrompt> prompts;
  auto decode_refusal = [&](const Tokens& prompt, Bucket bucket, ResidualHook* hook) {
    const Tokens out = backbone.greedy_decode(prompt, schedule.decode_len, hook, tok::kEos);
    return judge.judge(prompt, out, bucket).refusal;
  };
  auto evaluate = [&](const Tokens& prompt, const Array& z, Bucket bucket, auto&& fill) {
    const Route r = route(z, params.router);
    CalibrationPrompt cp{bucket, r.gate_logit, {}};
    const double gammas[3] = {0.0, 1.0, num::sigmoid(r.gate_logit)};
    for (int g = 0; g < 3; ++g) {
      FrozenControllerHook hook(params, gammas[g], r.mixture);
      cp.at[g].refusal = decode_refusal(prompt, bucket, &hook);
      fill(cp.at[g], &hook);
    }
    prompts.push_back(std::move(cp));
  };
  for (std::size_t i = 0; i < take(cache.edits.size()); ++i) {
    const EditExample& ex = cache.edits[i];
    evaluate(ex.prompt, ex.z, Bucket::edit,
             [&](GammaOutcome& o, ResidualHook* h) { o.anchor_nll = anchor_nll(backbone, ex.prompt, ex.anchor, h); });
  }
  for (const auto* keeps : {&cache.benign, &cache.harmful}) {
    for (std::size_t i = 0; i < take(keeps->size()); ++i) {
      const KeepExample& ex = (*keeps)[i];
      evaluate(ex.prompt, ex.z, ex.bucket, [&](GammaOutcome& o, ResidualHook* h) {
        if (ex.bucket == Bucket::benign_keep) o.step_kls = keep_step_kls(backbone, ex, h);
      });
    }
  }
  require_config(!prompts.empty(), "calibrate_gate: empty calibration split");

  auto components_for = [&](const GatePolicy& p) {
    std::size_t ne = 0, e_refuse = 0, nh = 0, h_refuse = 0, h_refuse0 = 0;
    double nll = 0.0;
    std::vector<std::vector<double>> kls;
    for (const CalibrationPrompt& cp : prompts) {
      const GammaOutcome& o = cp.at[outcome_index(p, cp.logit)];
      switch (cp.bucket) {
        case Bucket::edit: ++ne, e_refuse += o.refusal, nll += o.anchor_nll; break;
        case Bucket::benign_keep: kls.push_back(o.step_kls); break;
        case Bucket::harmful_keep: ++nh, h_refuse += o.refusal, h_refuse0 += cp.at[0].refusal; break;
      }
    }
    CalibrationComponents c;
    c.safe_non_refusal = ne == 0 ? 0.0 : 1.0 - static_cast<double>(e_refuse) / ne;
    c.edit_alignment = ne == 0 ? 0.0 : std::exp(-nll / ne);
    c.benign_preservation = kls.empty() ? 1.0 : preservation(kls);
    c.harmful_retention = nh == 0 ? 1.0
                                  : std::min(1.0, harmful_refusal_retention(static_cast<double>(h_refuse) / nh,
                                                                            static_cast<double>(h_refuse0) / nh));
    return c;
  };

  GateCalibration out;
  out.n_prompts = prompts.size();
  std::vector<double> logits;
  for (const auto& cp : prompts) logits.push_back(cp.logit);
  const std::vector<double> taus = threshold_candidates(logits);
  auto consider = [&](GatePolicy p) {
    CalibrationCandidate c{p, components_for(p), 0.0};
    c.score = scale_calibration_score(c.components, weights);
    out.candidates.push_back(c);
  };
  consider({GateKind::soft, 0.0});
  for (double t : taus) consider({GateKind::hard, t});
  for (double t : taus) consider({GateKind::thresholded_soft, t});

  double best = -std::numeric_limits<double>::infinity();
  for (const auto& c : out.candidates) best = std::max(best, c.score);
  for (GateKind kind : {GateKind::soft, GateKind::hard, GateKind::thresholded_soft}) {
    double kb = -std::numeric_limits<double>::infinity();
    for (const auto& c : out.candidates) {
      if (c.policy.kind == kind) kb = std::max(kb, c.score);
    }
    std::vector<double> tied;
    for (const auto& c : out.candidates) {
      if (c.policy.kind == kind && c.score == kb) tied.push_back(c.policy.threshold);
    }
    // Tied thresholds are sorted ascending; take the lower median.
    out.best_by_kind[kind] = {kind, tied[(tied.size() - 1) / 2]};
  }
  // Preference among kinds reaching the best score: thresholded-soft, hard, soft.
  GateKind winner = GateKind::soft;
  for (GateKind kind : {GateKind::soft, GateKind::hard, GateKind::thresholded_soft}) {
    const bool reaches = std::any_of(out.candidates.begin(), out.candidates.end(), [&](const CalibrationCandidate& c) {
      return c.policy.kind == kind && c.score == best;
    });
    if (reaches) winner = kind;
  }
  out.selected = out.best_by_kind.at(winner);

  std::vector<double> probs;
  std::vector<int> raw_active, sel_active;
  std::vector<Bucket> buckets;
  std::vector<double> sel_gamma;
  for (const auto& cp : prompts) {
    const double p = num::sigmoid(cp.logit);
    probs.push_back(p);
    raw_active.push_back(p >= 0.5 ? 1 : 0);
    const double g = gate(out.selected, cp.logit);
    sel_gamma.push_back(g);
    sel_active.push_back(out.selected.kind == GateKind::soft ? (g >= 0.5 ? 1 : 0) : (g > 0.0 ? 1 : 0));
    buckets.push_back(cp.bucket);
  }
  out.raw = route_diagnostics(probs, raw_active, buckets);
  out.selected_view = route_diagnostics(sel_gamma, sel_active, buckets);

  params.policy = out.selected;
  params.stages.calibrated = true;
  require(params.experts_checksum() == experts_before, "calibrate_gate: expert weights changed during calibration");
  return out;
}

}  // namespace paving
