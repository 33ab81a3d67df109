// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "paving/evaluation.hpp"

namespace paving {

/// Four aligned traces over (layer in L_I, step) rows, each d wide. Rows are
/// layer-major: row = layer_index * steps + step.
struct TrajectoryRecord {
  std::string id;
  Bucket bucket = Bucket::edit;
  std::vector<int> layers;
  std::size_t steps = 0;
  RouteDecision route;
  num::Array h0, hi, he, hr;  // he/hr are empty for keeps; hr empty when the base did not refuse
};

num::Array displacement(const num::Array& h, const num::Array& h0);

/// Edit prompt: H0 and HI on prompt + y^E, HE on the teacher prompt + y^E, HR on
/// prompt + the base-refused continuation, all truncated to a common length.
TrajectoryRecord build_record(const Backbone& backbone, const Intervention& intervention, const Vocabulary& vocab,
                              const PromptRecord& record, const std::vector<int>& layers, std::size_t horizon);
/// Keep prompt: H0 and HI on prompt + the base continuation.
TrajectoryRecord build_keep_record(const Backbone& backbone, const Intervention& intervention,
                                   const PromptRecord& record, const std::vector<int>& layers, std::size_t horizon);

struct Alignment {
  std::optional<double> edit;     // cos(D^I, D^E); empty when either norm is 0
  std::optional<double> refusal;  // cos(D^I, D^R); empty without a refusal reference
};

Alignment alignment(const TrajectoryRecord& r);
/// Per-layer cos(D^I, D^E) over the steps of each L_I layer; empty entries where undefined.
std::vector<std::optional<double>> layer_alignment(const TrajectoryRecord& r);

/// Elementwise RMS of HI - H0 over every (layer, step, dim) entry.
double base_path_rms(const TrajectoryRecord& r);

/// Edits: percent reduction of the mean anchor-token NLL relative to the base.
/// Keeps: NLL(intervened) - NLL(base) on the base continuation.
double anchor_nll_effect(const Backbone& backbone, const Intervention& intervention, const PromptRecord& record,
                         std::size_t horizon);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};
MeanStd mean_std(const std::vector<double>& values);

struct TrajectoryGroup {
  Bucket bucket = Bucket::edit;
  std::size_t n = 0;
  double active_rate = 0.0;
  double veto_rate = 0.0;
  MeanStd edit_alignment;
  MeanStd refusal_alignment;
  MeanStd anchor_nll_effect;
  MeanStd base_path_rms;
  std::size_t excluded_zero_displacement = 0;
  std::size_t excluded_no_refusal = 0;
};

struct TrajectoryReport {
  std::vector<TrajectoryGroup> groups;  // edit, benign, harmful
  std::vector<int> layers;
  std::vector<MeanStd> layer_profile;   // per L_I layer, edit prompts
  double contrastive_gap = 0.0;         // mean edit alignment - mean refusal alignment
};

TrajectoryReport diagnose_trajectories(const Backbone& backbone, const Intervention& intervention,
                                       const Vocabulary& vocab, const std::vector<PromptRecord>& records,
                                       const std::vector<int>& layers, std::size_t horizon);

}  // namespace paving
