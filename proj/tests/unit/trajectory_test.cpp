// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "paving/errors.hpp"
#include "paving/trajectory.hpp"
#include "world.hpp"

namespace paving {
namespace {

using num::Array;
using testing::trained;
using testing::world;

const PromptRecord& first(Bucket b) { return *select_bucket(world().splits.eval, b).front(); }

TEST(Trajectory, DisplacementShapeContract) {
  EXPECT_THROW(displacement(Array(2, 3), Array(3, 2)), ContractViolation);
  const Array d = displacement(Array(1, 2, 3.0), Array(1, 2, 1.0));
  EXPECT_EQ(d, Array(1, 2, 2.0));
}

TEST(Trajectory, AlignmentIsTheCosineOfDisplacements) {
  TrajectoryRecord r;
  r.layers = {1};
  r.steps = 1;
  r.h0 = Array(1, 2, {0.0, 0.0});
  r.hi = Array(1, 2, {1.0, 0.0});
  r.he = Array(1, 2, {1.0, 1.0});
  r.hr = Array(1, 2, {-1.0, 0.0});
  const Alignment a = alignment(r);
  EXPECT_NEAR(*a.edit, 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_EQ(*a.refusal, -1.0);
  EXPECT_NEAR(base_path_rms(r), std::sqrt(0.5), 1e-15);
  r.hi = r.h0;
  EXPECT_FALSE(alignment(r).edit.has_value());
  EXPECT_EQ(base_path_rms(r), 0.0);
}

TEST(Trajectory, MeanStdIsPopulation) {
  const MeanStd m = mean_std({1.0, 3.0});
  EXPECT_EQ(m.mean, 2.0);
  EXPECT_EQ(m.std, 1.0);
  EXPECT_EQ(m.n, 2u);
  EXPECT_EQ(mean_std({}).n, 0u);
}

TEST(Trajectory, RecordShapesAndInactiveRoute) {
  const auto& w = world();
  ControllerParams p = trained().params;
  const std::vector<int>& layers = p.intervention_layers;
  const ControllerIntervention iv(*w.backbone, p, p.policy, std::nullopt);
  const TrajectoryRecord r = build_record(*w.backbone, iv, w.vocab, first(Bucket::edit), layers, w.schedule.horizon);
  EXPECT_EQ(r.h0.rows(), layers.size() * r.steps);
  EXPECT_TRUE(r.hi.same_shape(r.h0) && r.he.same_shape(r.h0));
  EXPECT_EQ(layer_alignment(r).size(), layers.size());
  EXPECT_FALSE(r.hr.empty());  // the base refuses this edit prompt

  p.scale = 0.0;
  const ControllerIntervention off(*w.backbone, p, p.policy, std::nullopt);
  const TrajectoryRecord z = build_record(*w.backbone, off, w.vocab, first(Bucket::edit), layers, w.schedule.horizon);
  EXPECT_EQ(z.hi, z.h0);
  EXPECT_EQ(base_path_rms(z), 0.0);

  const TrajectoryRecord k = build_keep_record(*w.backbone, iv, first(Bucket::benign_keep), layers, w.schedule.horizon);
  EXPECT_TRUE(k.he.empty() && k.hr.empty());
  EXPECT_THROW(build_record(*w.backbone, iv, w.vocab, first(Bucket::benign_keep), layers, 4), ContractViolation);
}

TEST(Trajectory, AnchorEffectIsZeroWhenGateIsOff) {
  const auto& w = world();
  const auto& p = trained().params;
  const ControllerIntervention iv(*w.backbone, p, p.policy, std::nullopt);
  const PromptRecord& keep = first(Bucket::benign_keep);
  if (iv.decide(keep.tokens, std::nullopt).effective_gate() == 0.0) {
    EXPECT_EQ(anchor_nll_effect(*w.backbone, iv, keep, w.schedule.horizon), 0.0);
  }
  EXPECT_GT(anchor_nll_effect(*w.backbone, iv, first(Bucket::edit), w.schedule.horizon), 0.0);
}

TEST(Trajectory, TrainedControllerPrefersTheEditPath) {
  const auto& w = world();
  const auto& t = trained();
  const ControllerIntervention iv(*w.backbone, t.params, t.params.policy, t.veto);
  const TrajectoryReport rep =
      diagnose_trajectories(*w.backbone, iv, w.vocab, w.splits.eval, t.params.intervention_layers, w.schedule.horizon);
  ASSERT_EQ(rep.groups.size(), 3u);
  const TrajectoryGroup& edit = rep.groups[0];
  EXPECT_GT(edit.edit_alignment.mean, edit.refusal_alignment.mean);
  EXPECT_GT(rep.contrastive_gap, 0.0);
  EXPECT_GT(edit.base_path_rms.mean, rep.groups[1].base_path_rms.mean);
  EXPECT_GT(edit.base_path_rms.mean, rep.groups[2].base_path_rms.mean);
  EXPECT_EQ(rep.layer_profile.size(), t.params.intervention_layers.size());
}

TEST(Trajectory, OracleRouteIsRejected) {
  const auto& w = world();
  const ControllerIntervention oracle(*w.backbone, trained().params, {GateKind::oracle, 0.0}, std::nullopt);
  EXPECT_THROW(diagnose_trajectories(*w.backbone, oracle, w.vocab, w.splits.eval, {2}, 4), ContractViolation);
}

}  // namespace
}  // namespace paving
