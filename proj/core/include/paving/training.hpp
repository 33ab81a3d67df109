// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "paving/controller.hpp"
#include "paving/metrics.hpp"
#include "paving/task.hpp"

namespace paving {

struct LossWeights {
  double ce = 2.0;
  double kl = 0.2;
  double trajectory = 0.25;
  double gate = 0.5;
  double preservation = 1.0;
  double warmup_edit = 1.0;    // lambda_e
  double warmup_benign = 1.0;  // lambda_b
  double harmful_preservation = 1.5;
  double pair_margin = 0.25;
  int hard_negatives = 5;
  double pair = 1.0;  // weight of the harmful-pair hinge; 0 disables it
  double l2 = 1e-4;

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

enum class EditTargetSource { teacher, one_hot };
std::string to_string(EditTargetSource s);
EditTargetSource parse_edit_target_source(const std::string& name);

struct TrainSchedule {
  int gate_epochs = 10;
  int warmup_epochs = 1;
  int stage1_epochs = 2;
  int stage2_epochs = 4;
  int stage3_epochs = 1;
  std::size_t horizon = 8;      // T_x
  std::size_t stage1_steps = 3;
  double gate_lr = 1e-3;
  double warmup_lr = 3e-4;
  double fit_lr = 3e-4;
  bool warmup = true;  // ablation switch
  std::size_t top_k = 16;
  EditTargetSource target_source = EditTargetSource::teacher;
  double target_temperature = 2.0;
  bool filter_base_refused = true;
  double calibration_fraction = 0.25;
  std::size_t fit_step_budget = 0;  // cap on supervised optimizer steps across stages 1-3; 0 = no cap
  std::size_t decode_len = 8;
  std::uint64_t seed = 13;

  void validate() const;
  friend bool operator==(const TrainSchedule&, const TrainSchedule&) = default;
};

/// Frozen-base quantities for one edit prompt. States hold, per layer 0..L,
/// the rows at the teacher-forced step positions.
struct EditExample {
  std::string id;
  Tokens prompt;
  Tokens target;  // y^E, truncated to the horizon
  Tokens anchor;  // anti-refusal anchor
  num::Array z;
  num::Array target_probs;               // p^E, steps x vocab
  std::vector<num::Array> base_states;   // H^0 on prompt + target
  std::vector<num::Array> anchor_states; // H^E on teacher prompt + target
};

struct KeepExample {
  std::string id;
  Bucket bucket = Bucket::benign_keep;
  Tokens prompt;
  Tokens continuation;  // base greedy continuation, EOS included when emitted
  num::Array z;
  TopKReference reference;
  num::Array base_probs;  // full-vocabulary base distributions, steps x vocab
};

struct FeatureCache {
  std::vector<EditExample> edits;
  std::vector<KeepExample> benign;
  std::vector<KeepExample> harmful;
  std::vector<std::string> filtered_edits;  // edit prompts the base did not refuse
  std::size_t horizon = 0;
  std::size_t top_k = 0;
  std::vector<int> route_layers;
};

/// Base greedy continuation up to `horizon` tokens, with EOS appended when emitted.
Tokens base_continuation(const Backbone& backbone, const Tokens& prompt, std::size_t horizon);

FeatureCache build_feature_cache(const Backbone& backbone, const Vocabulary& vocab,
                                 const std::vector<PromptRecord>& records, const std::vector<int>& route_layers,
                                 const TrainSchedule& schedule);

struct LossTerms {
  double ce = 0.0, kl = 0.0, trajectory = 0.0, gate = 0.0, preservation = 0.0, pair = 0.0, l2 = 0.0;
  double total = 0.0;
};

/// Everything a per-prompt loss needs besides the prompt itself.
struct LossContext {
  const Backbone& backbone;
  const ControllerParams& params;
  const BoundController& bound;
  const LossWeights& weights;
  std::size_t step_cap;
};

/// Trajectory penalty 1 - cos(D^I, D^E); 1 when either displacement is zero.
num::Var trajectory_loss(num::Tape& tape, num::Var intervened, const num::Array& base, const num::Array& anchor);
/// Hinge max(0, margin - (a_edit - a_harmful)) averaged over negatives.
num::Var harmful_pair_penalty(num::Tape& tape, num::Var edit_logit, const std::vector<num::Var>& harmful_logits,
                              double margin);

/// Rows of `states` (per layer) at the first `steps` positions, stacked over L_I.
num::Array stack_layers(const std::vector<num::Array>& states, const std::vector<int>& layers, std::size_t steps);

num::Var edit_loss(num::Tape& tape, const LossContext& ctx, const EditExample& ex, LossTerms* terms);
num::Var keep_loss(num::Tape& tape, const LossContext& ctx, const KeepExample& ex, LossTerms* terms);
/// Controller L2 on the tape over all trainable controller leaves.
num::Var l2_penalty(num::Tape& tape, const BoundController& bound, double weight);

struct StageLog {
  std::string stage;
  std::vector<double> epoch_loss;
  std::map<std::string, double> metrics;
};

struct TrainingTranscript {
  std::vector<StageLog> stages;
};

/// Stage (i): weighted BCE of the gate head against g*. Also sets the router's
/// feature normalization from the training features.
void pretrain_gate(ControllerParams& params, const FeatureCache& cache, const TrainSchedule& schedule,
                   StageLog* log = nullptr);

/// Stage (ii): anchor CE on edits plus full-vocabulary KL(p0 || p) on benign keeps.
void contrastive_warmup(ControllerParams& params, const Backbone& backbone, const FeatureCache& cache,
                        const LossWeights& weights, const TrainSchedule& schedule, StageLog* log = nullptr);

/// Warmup loss for one prompt (exposed for tests).
num::Var warmup_edit_loss(num::Tape& tape, const LossContext& ctx, const EditExample& ex);
num::Var warmup_benign_loss(num::Tape& tape, const LossContext& ctx, const KeepExample& ex);

/// Supervised sub-stage 1, 2 or 3. Stage 1 caps traces at stage1_steps; stage 3
/// adds the harmful-pair hinge with per-epoch hard-negative mining.
void supervised_stage(int stage, ControllerParams& params, const Backbone& backbone, const FeatureCache& cache,
                      const LossWeights& weights, const TrainSchedule& schedule, StageLog* log = nullptr);

/// Runs sub-stages 1..3 in order.
void supervised_fit(ControllerParams& params, const Backbone& backbone, const FeatureCache& cache,
                    const LossWeights& weights, const TrainSchedule& schedule, TrainingTranscript* transcript = nullptr);

/// Indices of the k harmful examples with the highest current gate logits.
std::vector<std::size_t> mine_hard_negatives(const ControllerParams& params, const FeatureCache& cache, std::size_t k);

struct CalibrationCandidate {
  GatePolicy policy;
  CalibrationComponents components;
  double score = 0.0;
};

struct RouteDiagnostics {
  double brier = 0.0;
  double ece = 0.0;
  double accuracy = 0.0;
  double edit_active = 0.0;
  double benign_active = 0.0;
  double harmful_active = 0.0;
};

struct GateCalibration {
  GatePolicy selected;
  std::map<GateKind, GatePolicy> best_by_kind;
  std::vector<CalibrationCandidate> candidates;
  RouteDiagnostics raw;       // sigma(a) against g*
  RouteDiagnostics selected_view;
  std::size_t n_prompts = 0;
};

/// Stage (iv): sweeps soft / hard / thresholded-soft policies on a calibration
/// subset of the training cache and selects by the scale-calibration score.
/// Expert weights are not touched.
GateCalibration calibrate_gate(ControllerParams& params, const Backbone& backbone, const FeatureCache& cache,
                               const TrainSchedule& schedule, const Judge& judge,
                               const CalibrationWeights& weights = {});

/// Brier and ECE of `probs` against route labels; accuracy and activation
/// rates from the binary `active` decisions.
RouteDiagnostics route_diagnostics(std::span<const double> probs, std::span<const int> active,
                                   std::span<const Bucket> buckets);

}  // namespace paving
