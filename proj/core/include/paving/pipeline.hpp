// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "paving/baselines.hpp"
#include "paving/config.hpp"
#include "paving/trajectory.hpp"

namespace paving {

/// Append-only record of one run. With a file attached, every event is written
/// as one JSON line the moment it is recorded.
class RunSummary {
 public:
  RunSummary() = default;
  RunSummary(std::string command, const RunConfig& cfg, std::optional<std::filesystem::path> file = std::nullopt);

  void event(const std::string& kind, nlohmann::json payload);
  void artifact(const std::string& name, const std::filesystem::path& path, const std::string& sha256);
  /// Wall-clock timing for a stage; kept out of the deterministic report.
  void timing(const std::string& stage, double seconds);

  const nlohmann::json& events() const { return events_; }
  const std::string& config_digest() const { return digest_; }

 private:
  std::string digest_;
  nlohmann::json events_ = nlohmann::json::array();
  std::optional<std::filesystem::path> file_;
};

std::unique_ptr<Judge> make_judge(const std::string& name);

/// Task splits, frozen backbone, training cache and eval-side base outcomes.
struct PreparedRun {
  RunConfig config;
  Vocabulary vocab;
  TaskSplits splits;
  std::unique_ptr<Backbone> backbone;
  PretrainReport pretrain;
  FeatureCache cache;
  std::unique_ptr<Judge> judge;
  BaseReference base;
};

/// A controller through gate pretraining, warmup, fitting, calibration and veto.
struct TrainedController {
  ControllerParams params;
  RouterParams probe;  // router right after gate pretraining
  TrainingTranscript transcript;
  GateCalibration calibration;
  std::optional<VetoModel> veto;
  VetoCalibration veto_calibration;
};

struct PipelineResult {
  std::string config_digest;
  TrainedController controller;
  EvalReport base, learned;
  std::optional<EvalReport> oracle;
  std::optional<OracleGaps> gaps;
  std::optional<double> keep_side_gain;
  std::optional<TrajectoryReport> trajectory;
  std::vector<SweepResult> baselines;
  /// Deterministic machine-readable report; no timings.
  nlohmann::json report;
};

struct PipelineOptions {
  std::optional<std::filesystem::path> out_dir;  // checkpoints, report, tables, summary
  std::string command = "run";
  /// Reuse an existing backbone instead of pretraining one.
  std::optional<std::filesystem::path> backbone_checkpoint;
};

/// Generates the task, pretrains (or loads) the backbone, builds the cache and
/// the eval-side base reference.
PreparedRun prepare_run(const RunConfig& cfg, RunSummary& summary, const PipelineOptions& options = {});

TrainedController train_controller(const PreparedRun& run, const ControllerConfig& controller,
                                   const TrainSchedule& schedule, RunSummary& summary,
                                   const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt);

/// Fits the veto on the training-cache boundary features.
std::pair<VetoModel, VetoCalibration> fit_run_veto(const PreparedRun& run, const VetoSettings& settings);

/// cache -> gate -> warmup -> fit -> calibrate -> veto -> evaluate -> trajectories -> report.
/// A stage failure is rethrown with the stage name; the summary keeps what ran.
PipelineResult run_pipeline(const RunConfig& cfg, const PipelineOptions& options = {});

enum class AblationVariant { full, uniform_mixture, no_warmup, late_layers };
std::string to_string(AblationVariant v);
AblationVariant parse_ablation_variant(const std::string& name);

/// The last third of the backbone's layers.
std::vector<int> late_layers(int n_layers);

/// Trains one variant under the fixed ablation budget and evaluates it with the
/// learned route and veto.
EvalReport run_ablation(const PreparedRun& run, AblationVariant variant, RunSummary& summary);

/// Builds an ActAdd or DIM direction and sweeps it over the configured scales.
SweepResult run_baseline(const PreparedRun& run, const TrainedController& trained, SteeringSource method,
                         const std::vector<SteeringRouting>& routings, const std::vector<double>& scales,
                         double benign_floor);

/// Writes `report` plus rendered tables next to it; returns the report path.
std::filesystem::path write_report(const std::filesystem::path& dir, const std::string& config_digest,
                                   const nlohmann::json& report, RunSummary* summary = nullptr);

}  // namespace paving
