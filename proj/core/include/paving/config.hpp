// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "paving/backbone.hpp"
#include "paving/controller.hpp"
#include "paving/pretrain.hpp"
#include "paving/task.hpp"
#include "paving/training.hpp"
#include "paving/veto.hpp"

namespace paving {

struct VetoSettings {
  bool enabled = true;
  double l2_weight = 0.1;
  int max_iter = 100;
  ThresholdMode mode = ThresholdMode::high;
  friend bool operator==(const VetoSettings&, const VetoSettings&) = default;
};

struct BaselineSettings {
  bool enabled = false;
  std::vector<double> scales{0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
  double benign_floor = 0.90;
  friend bool operator==(const BaselineSettings&, const BaselineSettings&) = default;
};

/// Every knob of a run. Two configs with the same digest produce the same numbers.
struct RunConfig {
  std::uint64_t seed = 1;  // task generation
  int vocab_size = 64;
  TaskSizes train_sizes{200, 200, 48};
  TaskSizes eval_sizes{100, 100, 24};
  BackboneConfig backbone;
  PretrainOptions pretrain;
  ControllerConfig controller;
  LossWeights weights;
  TrainSchedule schedule;
  VetoSettings veto;
  std::string judge = "desk";
  bool oracle = true;      // emit oracle rows
  bool trajectory = true;  // run trajectory diagnostics
  BaselineSettings baselines;
  std::size_t ablation_budget = 200;  // supervised steps per design-ablation variant

  void validate() const;
};

/// Desk-scale defaults. Controller scale 1 and gain clip 0.5; see README.
RunConfig desk_defaults();

/// Reseeds every component from one master seed.
void apply_seed(RunConfig& cfg, std::uint64_t seed);

nlohmann::json to_json(const RunConfig& cfg);
/// Rejects unknown keys and wrong types; absent keys keep their defaults.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

/// Compact JSON with sorted keys.
std::string canonical_json(const RunConfig& cfg);
/// SHA-256 of the canonical JSON.
std::string config_digest(const RunConfig& cfg);

}  // namespace paving
