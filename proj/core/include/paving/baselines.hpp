// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "paving/evaluation.hpp"

namespace paving {

enum class SteeringSource { actadd_edit_target, dim_refusal };
std::string to_string(SteeringSource s);
SteeringSource parse_steering_source(const std::string& name);

enum class SteeringRouting { global, probe, probe_veto, oracle };
std::string to_string(SteeringRouting r);
SteeringRouting parse_steering_routing(const std::string& name);

/// One shared residual direction, added at every L_I layer.
struct SteeringDirection {
  num::Array vector;  // 1 x d
  SteeringSource source = SteeringSource::actadd_edit_target;
  int read_layer = 0;
  std::string read_position;
  double norm = 0.0;
  std::string fit_split;
};

/// Mean over edit prompts of the final-token state of the teacher prompt (the
/// context that yields y^E) minus the final-token state of the plain prompt,
/// which the base refuses.
SteeringDirection fit_actadd(const Backbone& backbone, const Vocabulary& vocab, const std::vector<PromptRecord>& train,
                             int read_layer);
/// Mean benign-keep minus mean harmful-keep state at the final prompt token.
SteeringDirection fit_dim(const Backbone& backbone, const std::vector<PromptRecord>& train, int read_layer);

/// Adds scale * gamma * direction at every position of each L_I layer.
class SteeringIntervention : public Intervention {
 public:
  /// `probe` is the stage-(i) router used by probe routings; `veto` is required by probe_veto.
  SteeringIntervention(const Backbone& backbone, SteeringDirection direction, std::vector<int> intervention_layers,
                       double scale, SteeringRouting routing, std::optional<RouterParams> probe,
                       std::vector<int> route_layers, std::optional<VetoModel> veto);

  RouteDecision decide(std::span<const int> prompt, std::optional<int> oracle_label) const override;
  std::unique_ptr<ResidualHook> hook(const RouteDecision& decision) const override;
  std::string checksum() const override;
  double scale() const override { return scale_; }
  bool needs_oracle_label() const override { return routing_ == SteeringRouting::oracle; }

 private:
  const Backbone& backbone_;
  SteeringDirection direction_;
  std::vector<int> layers_;
  double scale_;
  SteeringRouting routing_;
  std::optional<RouterParams> probe_;
  std::vector<int> route_layers_;
  std::optional<VetoModel> veto_;
};

struct SweepRow {
  double scale = 0.0;
  SteeringRouting routing = SteeringRouting::global;
  EvalReport report;
  bool meets_floor = false;
};

struct SweepOptions {
  std::vector<double> scales{0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
  std::vector<SteeringRouting> routings{SteeringRouting::global};
  /// Selection considers global rows with benign preservation at or above this floor.
  double benign_floor = 0.90;
};

struct SweepResult {
  SteeringDirection direction;
  std::vector<SweepRow> rows;
  std::optional<std::size_t> selected;  // index into rows; empty when no global row meets the floor
  std::optional<std::size_t> selected_unconstrained;  // best global row by score alone
};

/// Evaluates every (scale, routing) pair through the shared evaluation path and
/// selects the global row with the highest baseline control score (ties: smaller
/// scale), once among rows meeting the benign floor and once without it.
SweepResult apply_and_sweep(const Backbone& backbone, const SteeringDirection& direction,
                            const std::vector<int>& intervention_layers, const std::vector<int>& route_layers,
                            const std::optional<RouterParams>& probe, const std::optional<VetoModel>& veto,
                            const std::vector<PromptRecord>& records, const BaseReference& base, const Judge& judge,
                            const SweepOptions& options);

}  // namespace paving
