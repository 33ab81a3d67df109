// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>

#include "paving/pretrain.hpp"
#include "paving/training.hpp"
#include "paving/veto.hpp"

namespace paving::testing {

/// A width-16, 4-layer backbone pretrained on a small synthetic task. Built once
/// per test binary (about two seconds).
struct World {
  Vocabulary vocab{64};
  TaskSplits splits;
  std::unique_ptr<Backbone> backbone;
  FeatureCache cache;
  TrainSchedule schedule;
};

inline BackboneConfig world_backbone_config() {
  BackboneConfig c;
  c.width = 16;
  c.n_layers = 4;
  c.n_heads = 2;
  c.max_seq_len = 24;
  return c;
}

inline ControllerConfig world_controller_config() {
  ControllerConfig c;
  c.route_layers = {1};
  c.intervention_layers = {2, 3, 4};
  c.router_hidden = 8;
  c.scale = 1.0;
  c.gain_clip = 0.5;
  return c;
}

inline TrainSchedule world_schedule() {
  TrainSchedule s;
  s.horizon = 4;
  s.stage1_steps = 2;
  s.top_k = 8;
  s.decode_len = 6;
  s.gate_epochs = 20;
  s.stage1_epochs = 1;
  s.stage2_epochs = 2;
  s.stage3_epochs = 1;
  return s;
}

inline const World& world() {
  static const World w = [] {
    World out;
    out.splits = generate_task(out.vocab, 3, {64, 64, 32}, {16, 16, 8});
    PretrainOptions po;
    po.epochs = 16;
    out.backbone = std::make_unique<Backbone>(pretrain_backbone(world_backbone_config(), out.vocab, out.splits, po));
    out.schedule = world_schedule();
    out.cache = build_feature_cache(*out.backbone, out.vocab, out.splits.train, world_controller_config().route_layers,
                                    out.schedule);
    return out;
  }();
  return w;
}

/// A controller trained through every stage on the world's cache, plus its
/// stage-(i) router and a fitted veto.
struct TrainedWorld {
  ControllerParams params;
  RouterParams probe;
  VetoModel veto;
};

inline const TrainedWorld& trained() {
  static const TrainedWorld t = [] {
    const World& w = world();
    TrainSchedule sched = w.schedule;
    sched.stage1_epochs = 2;
    sched.stage2_epochs = 6;
    sched.stage3_epochs = 2;
    sched.fit_lr = 3e-3;
    TrainedWorld out;
    out.params = ControllerParams::init(world_controller_config(), w.backbone->width());
    pretrain_gate(out.params, w.cache, sched);
    out.probe = out.params.router;
    contrastive_warmup(out.params, *w.backbone, w.cache, {}, sched);
    supervised_fit(out.params, *w.backbone, w.cache, {}, sched);
    const DeskJudge judge;
    calibrate_gate(out.params, *w.backbone, w.cache, sched, judge);
    std::vector<num::Array> z;
    std::vector<Bucket> labels;
    for (const auto& e : w.cache.edits) {
      z.push_back(e.z);
      labels.push_back(Bucket::edit);
    }
    for (const auto* keeps : {&w.cache.benign, &w.cache.harmful}) {
      for (const auto& k : *keeps) {
        z.push_back(k.z);
        labels.push_back(k.bucket);
      }
    }
    out.veto = fit_veto(z, labels, {});
    return out;
  }();
  return t;
}

}  // namespace paving::testing
