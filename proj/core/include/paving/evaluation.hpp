// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "paving/controller.hpp"
#include "paving/metrics.hpp"
#include "paving/task.hpp"
#include "paving/veto.hpp"

namespace paving {

/// Gate decision for one prompt. effective_gate = veto_mask * gamma.
struct RouteDecision {
  double gate_logit = 0.0;
  std::vector<double> mixture;
  double gamma = 0.0;
  int veto_mask = 1;
  double effective_gate() const { return veto_mask * gamma; }
};

/// Something that routes a prompt and edits the residual stream. Routing sees
/// the prompt tokens and, only for oracle runs, the route label; bucket labels
/// never reach it otherwise.
class Intervention {
 public:
  virtual ~Intervention() = default;
  virtual RouteDecision decide(std::span<const int> prompt, std::optional<int> oracle_label) const = 0;
  /// Hook for a decided prompt; never active when effective_gate() == 0.
  virtual std::unique_ptr<ResidualHook> hook(const RouteDecision& decision) const = 0;
  /// Digest of the edit weights and scale; the gate policy is not part of it, so
  /// learned and oracle rows of one checkpoint share it.
  virtual std::string checksum() const = 0;
  virtual double scale() const = 0;
  virtual bool needs_oracle_label() const = 0;
};

/// The trained controller under a gate policy, optional veto, and scale.
class ControllerIntervention : public Intervention {
 public:
  ControllerIntervention(const Backbone& backbone, ControllerParams params, GatePolicy policy,
                         std::optional<VetoModel> veto);

  RouteDecision decide(std::span<const int> prompt, std::optional<int> oracle_label) const override;
  std::unique_ptr<ResidualHook> hook(const RouteDecision& decision) const override;
  std::string checksum() const override;
  double scale() const override { return params_.scale; }
  bool needs_oracle_label() const override { return policy_.kind == GateKind::oracle; }

  const ControllerParams& params() const { return params_; }
  const GatePolicy& policy() const { return policy_; }

 private:
  const Backbone& backbone_;
  ControllerParams params_;
  GatePolicy policy_;
  std::optional<VetoModel> veto_;
};

/// Frozen-base outcomes shared by every evaluation over the same prompts.
struct BaseOutcome {
  Tokens completion;
  JudgeLabel label;
  Tokens continuation;     // teacher-forcing reference for preservation (keeps)
  TopKReference reference; // keeps only
};

struct BaseReference {
  std::vector<BaseOutcome> outcomes;  // aligned with the record list
  std::string prompt_digest;
  std::size_t decode_len = 0;
  std::size_t horizon = 0;
  std::size_t top_k = 0;
  std::string judge;
};

/// SHA-256 over ids, buckets and tokens in order.
std::string prompt_digest(const std::vector<PromptRecord>& records);

BaseReference build_base_reference(const Backbone& backbone, const std::vector<PromptRecord>& records,
                                   const Judge& judge, std::size_t decode_len, std::size_t horizon, std::size_t top_k);

struct PromptOutcome {
  std::string id;
  Bucket bucket = Bucket::edit;
  RouteDecision route;
  Tokens completion;
  JudgeLabel label;
  std::vector<double> step_kls;  // keeps only
};

struct BucketSummary {
  RateCI refusal;
  RateCI base_refusal;
  double preservation = 1.0;  // keeps only
  double activation_rate = 0.0;
  double veto_rate = 0.0;
};

struct EvalReport {
  std::string name;
  std::string checkpoint;
  std::string prompt_digest;
  std::string judge;
  double scale = 0.0;
  std::size_t decode_len = 0;
  BucketSummary edit, benign, harmful;
  double harmful_drift = 0.0;  // pp
  double edit_success = 0.0;   // 1 - R_E, on [0,1]
  double retention = 0.0;      // min(R_H / R_H(0), 1) with R_H(0) = 0 -> 1
  double control_score = 0.0;
  std::vector<PromptOutcome> prompts;

  const BucketSummary& bucket(Bucket b) const;
};

struct EvalOptions {
  std::string name = "learned";
  /// Supply g* to the intervention. Required by oracle policies, refused otherwise.
  bool oracle = false;
};

/// Decodes, judges and scores every prompt under `intervention`. Prompts whose
/// effective gate is 0 reuse the base outcome, which is what an inactive hook
/// would reproduce bit for bit.
EvalReport evaluate(const Backbone& backbone, const Intervention& intervention, const std::vector<PromptRecord>& records,
                    const BaseReference& base, const Judge& judge, const EvalOptions& options);

/// The frozen base as an evaluation row.
EvalReport base_report(const std::vector<PromptRecord>& records, const BaseReference& base);

GapInputs gap_inputs(const EvalReport& report);

}  // namespace paving
