// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "paving/baselines.hpp"
#include "paving/errors.hpp"
#include "world.hpp"

namespace paving {
namespace {

using num::Array;
using testing::trained;
using testing::world;

const std::vector<int> kLayers{2, 3, 4};
const std::vector<int> kRoute{1};

const BaseReference& base_ref() {
  static const BaseReference ref = [] {
    const auto& w = world();
    return build_base_reference(*w.backbone, w.splits.eval, DeskJudge{}, w.schedule.decode_len, w.schedule.horizon,
                                w.schedule.top_k);
  }();
  return ref;
}

TEST(Baselines, NamesRoundTrip) {
  for (auto r : {SteeringRouting::global, SteeringRouting::probe, SteeringRouting::probe_veto, SteeringRouting::oracle})
    EXPECT_EQ(parse_steering_routing(to_string(r)), r);
  for (auto s : {SteeringSource::actadd_edit_target, SteeringSource::dim_refusal})
    EXPECT_EQ(parse_steering_source(to_string(s)), s);
  EXPECT_THROW(parse_steering_routing("everywhere"), ConfigError);
}

TEST(Baselines, DimIsZeroForIdenticalBuckets) {
  const auto& w = world();
  PromptRecord b = *select_bucket(w.splits.train, Bucket::benign_keep).front();
  PromptRecord h = b;
  h.id = b.id + "-copy";
  h.bucket = Bucket::harmful_keep;
  const SteeringDirection d = fit_dim(*w.backbone, {b, h}, 2);
  EXPECT_EQ(d.norm, 0.0);
  EXPECT_EQ(d.vector, Array(1, w.backbone->width()));
}

TEST(Baselines, FittingRejectsBadInputs) {
  const auto& w = world();
  std::vector<PromptRecord> keeps;
  for (const auto& r : w.splits.train)
    if (r.bucket != Bucket::edit) keeps.push_back(r);
  EXPECT_THROW(fit_actadd(*w.backbone, w.vocab, keeps, 1), ConfigError);
  EXPECT_THROW(fit_dim(*w.backbone, w.splits.train, 9), ConfigError);
  EXPECT_THROW(fit_actadd(*w.backbone, w.vocab, w.splits.train, -1), ConfigError);
}

TEST(Baselines, HookAddsTheScaledDirection) {
  const auto& w = world();
  const SteeringDirection d = fit_actadd(*w.backbone, w.vocab, w.splits.train, 1);
  EXPECT_GT(d.norm, 0.0);
  const double s = 0.5;
  const SteeringIntervention iv(*w.backbone, d, kLayers, s, SteeringRouting::global, std::nullopt, kRoute,
                                std::nullopt);
  const Tokens& prompt = w.splits.eval.front().tokens;
  const RouteDecision dec = iv.decide(prompt, std::nullopt);
  EXPECT_EQ(dec.effective_gate(), 1.0);
  auto hook = iv.hook(dec);
  const ResidualTrace base = w.backbone->forward(prompt);
  const ResidualTrace edited = w.backbone->forward(prompt, hook.get());
  EXPECT_EQ(base.states[1], edited.states[1]);
  for (std::size_t t = 0; t < prompt.size(); ++t)
    for (std::size_t c = 0; c < w.backbone->width(); ++c)
      EXPECT_NEAR(edited.states[2](t, c) - base.states[2](t, c), s * d.vector[c], 1e-12);
}

TEST(Baselines, ZeroScaleAndOracleKeepsMatchTheBase) {
  const auto& w = world();
  const SteeringDirection d = fit_dim(*w.backbone, w.splits.train, 1);
  const SteeringIntervention zero(*w.backbone, d, kLayers, 0.0, SteeringRouting::global, std::nullopt, kRoute,
                                  std::nullopt);
  const EvalReport z = evaluate(*w.backbone, zero, w.splits.eval, base_ref(), DeskJudge{}, {"zero", false});
  const EvalReport b = base_report(w.splits.eval, base_ref());
  for (std::size_t i = 0; i < z.prompts.size(); ++i) EXPECT_EQ(z.prompts[i].completion, b.prompts[i].completion);

  const SteeringIntervention oracle(*w.backbone, d, kLayers, 4.0, SteeringRouting::oracle, std::nullopt, kRoute,
                                    std::nullopt);
  const EvalReport o = evaluate(*w.backbone, oracle, w.splits.eval, base_ref(), DeskJudge{}, {"oracle", true});
  EXPECT_EQ(o.benign.preservation, 1.0);
  EXPECT_EQ(o.harmful.preservation, 1.0);
  EXPECT_EQ(o.harmful_drift, 0.0);
}

TEST(Baselines, RoutingPrerequisites) {
  const auto& w = world();
  const SteeringDirection d = fit_dim(*w.backbone, w.splits.train, 1);
  EXPECT_THROW(SteeringIntervention(*w.backbone, d, kLayers, 1.0, SteeringRouting::probe, std::nullopt, kRoute,
                                    std::nullopt),
               ConfigError);
  EXPECT_THROW(SteeringIntervention(*w.backbone, d, kLayers, 1.0, SteeringRouting::probe_veto, trained().probe,
                                    kRoute, std::nullopt),
               ConfigError);
  EXPECT_THROW(SteeringIntervention(*w.backbone, d, kLayers, -1.0, SteeringRouting::global, std::nullopt, kRoute,
                                    std::nullopt),
               ConfigError);
  const SteeringIntervention pv(*w.backbone, d, kLayers, 1.0, SteeringRouting::probe_veto, trained().probe, kRoute,
                                trained().veto);
  EXPECT_NO_THROW(pv.decide(w.splits.eval.front().tokens, std::nullopt));
}

TEST(Baselines, SweepSelectionFollowsTheFloor) {
  const auto& w = world();
  const SteeringDirection d = fit_actadd(*w.backbone, w.vocab, w.splits.train, 1);
  SweepOptions opts;
  opts.scales = {0.0, 0.5, 4.0};
  opts.routings = {SteeringRouting::global, SteeringRouting::probe};
  const SweepResult a = apply_and_sweep(*w.backbone, d, kLayers, kRoute, trained().probe, std::nullopt,
                                        w.splits.eval, base_ref(), DeskJudge{}, opts);
  ASSERT_EQ(a.rows.size(), 6u);
  for (const SweepRow& r : a.rows) EXPECT_EQ(r.meets_floor, r.report.benign.preservation >= opts.benign_floor);
  // Scale 0 preserves everything, so a floor-meeting global row always exists.
  ASSERT_TRUE(a.selected.has_value());
  const SweepRow& pick = a.rows[*a.selected];
  EXPECT_EQ(pick.routing, SteeringRouting::global);
  for (const SweepRow& r : a.rows) {
    if (r.routing != SteeringRouting::global || !r.meets_floor) continue;
    EXPECT_LE(r.report.control_score, pick.report.control_score);
    if (r.report.control_score == pick.report.control_score) EXPECT_GE(r.scale, pick.scale);
  }
  ASSERT_TRUE(a.selected_unconstrained.has_value());
  EXPECT_GE(a.rows[*a.selected_unconstrained].report.control_score, pick.report.control_score);

  const SweepResult b = apply_and_sweep(*w.backbone, d, kLayers, kRoute, trained().probe, std::nullopt,
                                        w.splits.eval, base_ref(), DeskJudge{}, opts);
  EXPECT_EQ(a.selected, b.selected);
  for (std::size_t i = 0; i < a.rows.size(); ++i)
    EXPECT_EQ(a.rows[i].report.control_score, b.rows[i].report.control_score);
}

}  // namespace
}  // namespace paving
