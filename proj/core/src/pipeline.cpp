// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include "paving/pipeline.hpp"

#include <fmt/format.h>

#include <chrono>
#include <fstream>

#include "paving/checkpoint.hpp"
#include "paving/checksum.hpp"
#include "paving/errors.hpp"
#include "paving/reporting.hpp"

namespace paving {

using nlohmann::json;

RunSummary::RunSummary(std::string command, const RunConfig& cfg, std::optional<std::filesystem::path> file)
    : digest_(paving::config_digest(cfg)), file_(std::move(file)) {
  if (file_.has_value() && file_->has_parent_path()) std::filesystem::create_directories(file_->parent_path());
  event("start", {{"command", std::move(command)},
                  {"config_digest", digest_},
                  {"config", to_json(cfg)},
                  {"seeds",
                   {{"task", cfg.seed},
                    {"backbone", cfg.backbone.seed},
                    {"pretrain", cfg.pretrain.seed},
                    {"controller", cfg.controller.seed},
                    {"schedule", cfg.schedule.seed}}}});
}

void RunSummary::event(const std::string& kind, json payload) {
  json e = {{"event", kind}, {"data", std::move(payload)}};
  if (file_.has_value()) {
    std::ofstream out(*file_, std::ios::app);
    require_config(out.good(), "cannot append to run summary " + file_->string());
    out << e.dump() << "\n";
  }
  events_.push_back(std::move(e));
}

void RunSummary::artifact(const std::string& name, const std::filesystem::path& path, const std::string& sha256) {
  event("artifact", {{"name", name}, {"path", path.string()}, {"sha256", sha256}});
}

void RunSummary::timing(const std::string& stage, double seconds) {
  event("timing", {{"stage", stage}, {"seconds", seconds}});
}

std::unique_ptr<Judge> make_judge(const std::string& name) {
  require_config(name == "desk", "unknown judge '" + name + "' (available: desk)");
  return std::make_unique<DeskJudge>();
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Runs one stage, timing it and prefixing any failure with the stage name.
template <class F>
auto stage(RunSummary& summary, const std::string& name, F&& f) -> decltype(f()) {
  const auto t0 = std::chrono::steady_clock::now();
  auto fail = [&](const std::exception& e) {
    summary.event("stage_failed", {{"stage", name}, {"error", e.what()}});
    return fmt::format("stage '{}': {}", name, e.what());
  };
  try {
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      summary.timing(name, seconds_since(t0));
    } else {
      auto out = f();
      summary.timing(name, seconds_since(t0));
      return out;
    }
  } catch (const ContractViolation& e) {
    throw ContractViolation(fail(e));
  } catch (const ConfigError& e) {
    throw ConfigError(fail(e));
  } catch (const NumericError& e) {
    throw NumericError(fail(e));
  }
}

std::string save(RunSummary& summary, const std::optional<std::filesystem::path>& dir, const std::string& name,
                 const Checkpoint& ck) {
  if (!dir.has_value()) return sha256_hex(encode_checkpoint(ck));
  const auto path = *dir / (name + ".ckpt");
  const std::string sha = write_checkpoint(path, ck);
  summary.artifact(name, path, sha);
  return sha;
}

std::vector<num::Array> cache_features(const FeatureCache& cache, std::vector<Bucket>& labels) {
  std::vector<num::Array> z;
  for (const auto& e : cache.edits) {
    z.push_back(e.z);
    labels.push_back(Bucket::edit);
  }
  for (const auto& k : cache.benign) {
    z.push_back(k.z);
    labels.push_back(Bucket::benign_keep);
  }
  for (const auto& k : cache.harmful) {
    z.push_back(k.z);
    labels.push_back(Bucket::harmful_keep);
  }
  return z;
}

json pretrain_json(const PretrainReport& r) {
  json epochs = json::array();
  for (const PretrainEpoch& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"loss", e.loss},
                      {"edit_refusal", e.edit_refusal},
                      {"harmful_refusal", e.harmful_refusal},
                      {"benign_refusal", e.benign_refusal}});
  }
  return {{"epochs", epochs}, {"checksum", r.checksum}};
}

}  // namespace

PreparedRun prepare_run(const RunConfig& cfg, RunSummary& summary, const PipelineOptions& options) {
  cfg.validate();
  PreparedRun run{cfg, Vocabulary(cfg.vocab_size), {}, nullptr, {}, {}, make_judge(cfg.judge), {}};
  run.splits = stage(summary, "generate_task",
                     [&] { return generate_task(run.vocab, cfg.seed, cfg.train_sizes, cfg.eval_sizes); });
  const auto ckdir = options.out_dir.has_value() ? std::optional(*options.out_dir / "checkpoints") : std::nullopt;
  if (options.backbone_checkpoint.has_value()) {
    run.backbone = stage(summary, "load_backbone", [&] {
      auto bb = std::make_unique<Backbone>(backbone_from_checkpoint(read_checkpoint(*options.backbone_checkpoint)));
      require_config(bb->config() == cfg.backbone, "backbone checkpoint does not match the configured backbone");
      return bb;
    });
  } else {
    run.backbone = stage(summary, "pretrain_backbone", [&] {
      return std::make_unique<Backbone>(pretrain_backbone(cfg.backbone, run.vocab, run.splits, cfg.pretrain, &run.pretrain));
    });
    summary.event("pretrain", pretrain_json(run.pretrain));
  }
  save(summary, ckdir, "backbone", backbone_checkpoint(*run.backbone));
  run.cache = stage(summary, "cache_features", [&] {
    return build_feature_cache(*run.backbone, run.vocab, run.splits.train, cfg.controller.route_layers, cfg.schedule);
  });
  summary.event("cache", {{"edits", run.cache.edits.size()},
                          {"benign", run.cache.benign.size()},
                          {"harmful", run.cache.harmful.size()},
                          {"filtered_edits", run.cache.filtered_edits}});
  run.base = stage(summary, "base_reference", [&] {
    return build_base_reference(*run.backbone, run.splits.eval, *run.judge, cfg.schedule.decode_len, cfg.schedule.horizon,
                                cfg.schedule.top_k);
  });
  return run;
}

std::pair<VetoModel, VetoCalibration> fit_run_veto(const PreparedRun& run, const VetoSettings& settings) {
  std::vector<Bucket> labels;
  const auto z = cache_features(run.cache, labels);
  VetoFitOptions opts;
  opts.l2_weight = settings.l2_weight;
  opts.max_iter = settings.max_iter;
  VetoModel v = fit_veto(z, labels, opts);
  if (v.mode != settings.mode) {
    v.mode = settings.mode;
    v.threshold = select_threshold(v, z, labels, settings.mode);
  }
  return {v, evaluate_veto(v, z, labels)};
}

TrainedController train_controller(const PreparedRun& run, const ControllerConfig& controller,
                                   const TrainSchedule& schedule, RunSummary& summary,
                                   const std::optional<std::filesystem::path>& checkpoint_dir) {
  const RunConfig& cfg = run.config;
  TrainedController t;
  t.params = ControllerParams::init(controller, run.backbone->width());
  const int width = run.backbone->width();
  stage(summary, "pretrain_gate", [&] {
    StageLog log;
    pretrain_gate(t.params, run.cache, schedule, &log);
    t.transcript.stages.push_back(log);
  });
  t.probe = t.params.router;
  save(summary, checkpoint_dir, "controller-gate", controller_checkpoint(t.params, controller, width, "gate"));
  if (schedule.warmup) {
    stage(summary, "warmup", [&] {
      StageLog log;
      contrastive_warmup(t.params, *run.backbone, run.cache, cfg.weights, schedule, &log);
      t.transcript.stages.push_back(log);
    });
    save(summary, checkpoint_dir, "controller-warmup", controller_checkpoint(t.params, controller, width, "warmup"));
  }
  stage(summary, "supervised_fit", [&] {
    TrainingTranscript fit;
    supervised_fit(t.params, *run.backbone, run.cache, cfg.weights, schedule, &fit);
    t.transcript.stages.insert(t.transcript.stages.end(), fit.stages.begin(), fit.stages.end());
  });
  save(summary, checkpoint_dir, "controller-fit", controller_checkpoint(t.params, controller, width, "fit"));
  t.calibration = stage(summary, "calibrate_gate",
                        [&] { return calibrate_gate(t.params, *run.backbone, run.cache, schedule, *run.judge); });
  save(summary, checkpoint_dir, "controller-calibrated",
       controller_checkpoint(t.params, controller, width, "calibrated"));
  summary.event("transcript", to_json(t.transcript));
  summary.event("calibration", to_json(t.calibration));
  if (cfg.veto.enabled) {
    auto [v, cal] = stage(summary, "fit_veto", [&] { return fit_run_veto(run, cfg.veto); });
    t.veto = v;
    t.veto_calibration = cal;
    save(summary, checkpoint_dir, "veto", veto_checkpoint(v));
    summary.event("veto", to_json(cal));
  }
  return t;
}

SweepResult run_baseline(const PreparedRun& run, const TrainedController& trained, SteeringSource method,
                         const std::vector<SteeringRouting>& routings, const std::vector<double>& scales,
                         double benign_floor) {
  const std::vector<int>& lr = trained.params.route_layers;
  const int read_layer = *std::max_element(lr.begin(), lr.end());
  const SteeringDirection dir = method == SteeringSource::actadd_edit_target
                                    ? fit_actadd(*run.backbone, run.vocab, run.splits.train, read_layer)
                                    : fit_dim(*run.backbone, run.splits.train, read_layer);
  SweepOptions opts;
  opts.scales = scales;
  opts.routings = routings;
  opts.benign_floor = benign_floor;
  return apply_and_sweep(*run.backbone, dir, trained.params.intervention_layers, lr, trained.probe, trained.veto,
                         run.splits.eval, run.base, *run.judge, opts);
}

std::filesystem::path write_report(const std::filesystem::path& dir, const std::string& digest, const json& report,
                                   RunSummary* summary) {
  std::filesystem::create_directories(dir);
  const std::string stem = "report-" + digest.substr(0, 12);
  const std::string body = report.dump(2) + "\n";
  const Rendered tables = render_run_report(report);
  const std::vector<std::pair<std::filesystem::path, const std::string*>> files{
      {dir / (stem + ".json"), &body}, {dir / (stem + ".txt"), &tables.text}, {dir / (stem + ".tsv"), &tables.tsv}};
  for (const auto& [path, text] : files) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require_config(out.good(), "cannot write " + path.string());
    out << *text;
    if (summary != nullptr) summary->artifact(path.filename().string(), path, sha256_hex(*text));
  }
  return dir / (stem + ".json");
}

PipelineResult run_pipeline(const RunConfig& cfg, const PipelineOptions& options) {
  cfg.validate();
  std::optional<std::filesystem::path> summary_file;
  if (options.out_dir.has_value()) summary_file = *options.out_dir / ("summary-" + config_digest(cfg).substr(0, 12) + ".jsonl");
  RunSummary summary(options.command, cfg, summary_file);
  const auto ckdir = options.out_dir.has_value() ? std::optional(*options.out_dir / "checkpoints") : std::nullopt;

  PipelineResult res;
  res.config_digest = summary.config_digest();
  const PreparedRun run = prepare_run(cfg, summary, options);
  res.controller = train_controller(run, cfg.controller, cfg.schedule, summary, ckdir);
  const Backbone& bb = *run.backbone;

  res.base = base_report(run.splits.eval, run.base);
  const ControllerIntervention learned(bb, res.controller.params, res.controller.params.policy, res.controller.veto);
  res.learned = stage(summary, "evaluate_learned", [&] {
    return evaluate(bb, learned, run.splits.eval, run.base, *run.judge, {"learned", false});
  });
  if (cfg.oracle) {
    const ControllerIntervention oracle(bb, res.controller.params, GatePolicy{GateKind::oracle, 0.0}, std::nullopt);
    res.oracle = stage(summary, "evaluate_oracle", [&] {
      return evaluate(bb, oracle, run.splits.eval, run.base, *run.judge, {"oracle", true});
    });
    res.gaps = oracle_gap(gap_inputs(res.learned), gap_inputs(*res.oracle));
    res.keep_side_gain = keep_side_gain(100.0 * res.learned.benign.preservation, res.learned.harmful.refusal.rate,
                                        100.0 * res.oracle->benign.preservation, res.oracle->harmful.refusal.rate);
  }
  if (cfg.trajectory) {
    res.trajectory = stage(summary, "diagnose_trajectory", [&] {
      return diagnose_trajectories(bb, learned, run.vocab, run.splits.eval, res.controller.params.intervention_layers,
                                   cfg.schedule.horizon);
    });
  }
  if (cfg.baselines.enabled) {
    for (SteeringSource m : {SteeringSource::actadd_edit_target, SteeringSource::dim_refusal}) {
      res.baselines.push_back(stage(summary, "baseline_" + to_string(m), [&] {
        return run_baseline(run, res.controller, m, {SteeringRouting::global}, cfg.baselines.scales,
                            cfg.baselines.benign_floor);
      }));
    }
  }

  json& rep = res.report;
  rep["config_digest"] = res.config_digest;
  rep["config"] = to_json(cfg);
  rep["backbone_checksum"] = bb.checksum();
  rep["controller_checksum"] = learned.checksum();
  rep["filtered_edits"] = run.cache.filtered_edits;
  rep["transcript"] = to_json(res.controller.transcript);
  rep["calibration"] = to_json(res.controller.calibration);
  rep["veto"] = res.controller.veto.has_value() ? to_json(res.controller.veto_calibration) : json(nullptr);
  rep["rows"] = json::array({to_json(res.base), to_json(res.learned)});
  if (res.oracle.has_value()) {
    rep["rows"].push_back(to_json(*res.oracle));
    json gaps = to_json(*res.gaps);
    gaps["keep_side_gain"] = *res.keep_side_gain;
    rep["gaps"] = gaps;
  } else {
    rep["gaps"] = nullptr;
  }
  rep["trajectory"] = res.trajectory.has_value() ? to_json(*res.trajectory) : json(nullptr);
  rep["baselines"] = json::array();
  for (const SweepResult& s : res.baselines) rep["baselines"].push_back(to_json(s));

  summary.event("report", {{"learned", to_json(res.learned, false)},
                           {"oracle", res.oracle.has_value() ? to_json(*res.oracle, false) : json(nullptr)}});
  if (options.out_dir.has_value()) write_report(*options.out_dir, res.config_digest, rep, &summary);
  summary.event("finish", {{"config_digest", res.config_digest}});
  return res;
}

std::string to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::full: return "full";
    case AblationVariant::uniform_mixture: return "uniform_mixture";
    case AblationVariant::no_warmup: return "no_warmup";
    case AblationVariant::late_layers: return "late_layers";
  }
  return "full";
}

AblationVariant parse_ablation_variant(const std::string& name) {
  for (AblationVariant v : {AblationVariant::full, AblationVariant::uniform_mixture, AblationVariant::no_warmup,
                            AblationVariant::late_layers}) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown ablation variant '" + name + "'");
}

std::vector<int> late_layers(int n_layers) {
  const int third = (n_layers + 2) / 3;
  std::vector<int> out;
  for (int l = n_layers - third + 1; l <= n_layers; ++l) out.push_back(l);
  return out;
}

EvalReport run_ablation(const PreparedRun& run, AblationVariant variant, RunSummary& summary) {
  ControllerConfig cc = run.config.controller;
  TrainSchedule sch = run.config.schedule;
  sch.fit_step_budget = run.config.ablation_budget;
  if (variant == AblationVariant::no_warmup) sch.warmup = false;
  if (variant == AblationVariant::late_layers) cc.intervention_layers = late_layers(run.backbone->n_layers());
  cc.validate(run.backbone->n_layers(), run.backbone->width());
  TrainedController t = train_controller(run, cc, sch, summary);
  // The full recipe's experts, averaged uniformly instead of by the learned mixture.
  if (variant == AblationVariant::uniform_mixture) t.params.uniform_mixture = true;
  const ControllerIntervention iv(*run.backbone, t.params, t.params.policy, t.veto);
  EvalReport rep = evaluate(*run.backbone, iv, run.splits.eval, run.base, *run.judge, {to_string(variant), false});
  summary.event("ablation", {{"variant", to_string(variant)}, {"report", to_json(rep, false)}});
  return rep;
}

}  // namespace paving
