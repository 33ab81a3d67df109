// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

// paving: command-line driver for the routed residual controller.
// Exit codes: 0 success, 1 contract violation, 2 configuration error, 3 numeric error.

#include <fmt/format.h>

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "paving/checkpoint.hpp"
#include "paving/checksum.hpp"
#include "paving/pipeline.hpp"
#include "paving/reporting.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace paving;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "paving-out";
  std::string backbone;  // checkpoint path; empty pretrains
};

RunConfig load(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? desk_defaults() : load_config(c.config_path);
  if (c.seed.has_value()) apply_seed(cfg, *c.seed);
  cfg.validate();
  return cfg;
}

PipelineOptions pipeline_options(const Common& c, const std::string& command) {
  PipelineOptions o;
  o.out_dir = fs::path(c.out);
  o.command = command;
  if (!c.backbone.empty()) o.backbone_checkpoint = fs::path(c.backbone);
  return o;
}

RunSummary open_summary(const Common& c, const RunConfig& cfg, const std::string& command) {
  return RunSummary(command, cfg, fs::path(c.out) / ("summary-" + config_digest(cfg).substr(0, 12) + ".jsonl"));
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

void add_common(CLI::App* sub, Common& c, bool needs_backbone) {
  sub->add_option("--config", c.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Master seed override");
  sub->add_option("--out", c.out, "Output directory");
  if (needs_backbone) sub->add_option("--backbone", c.backbone, "Backbone checkpoint (pretrains when omitted)");
}

ControllerParams load_controller(const std::string& path) { return controller_from_checkpoint(read_checkpoint(path)); }

GatePolicy route_policy(const std::string& route, std::optional<double> threshold, const ControllerParams& params) {
  GatePolicy p = params.policy;
  if (route == "calibrated") return p;
  if (route == "soft") p.kind = GateKind::soft;
  else if (route == "hard") p.kind = GateKind::hard;
  else if (route == "thresholded") p.kind = GateKind::thresholded_soft;
  else if (route == "oracle") p.kind = GateKind::oracle;
  else throw ConfigError("unknown route '" + route + "'");
  if (threshold.has_value()) p.threshold = *threshold;
  return p;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void print_rendered(const Rendered& r) { std::cout << r.text; }

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"paving: routed residual controller for model editing"};
  app.require_subcommand(1);
  Common c;

  // generate-task
  auto* gen = app.add_subcommand("generate-task", "Write the synthetic train/eval splits as JSONL");
  add_common(gen, c, false);
  gen->callback([&] {
    const RunConfig cfg = load(c);
    const Vocabulary vocab(cfg.vocab_size);
    const TaskSplits s = generate_task(vocab, cfg.seed, cfg.train_sizes, cfg.eval_sizes);
    fs::create_directories(c.out);
    write_jsonl(fs::path(c.out) / "train.jsonl", s.train);
    write_jsonl(fs::path(c.out) / "eval.jsonl", s.eval);
    fmt::print("wrote {} train and {} eval prompts to {}\n", s.train.size(), s.eval.size(), c.out);
  });

  // pretrain-backbone
  auto* pre = app.add_subcommand("pretrain-backbone", "Pretrain the frozen backbone to refuse flagged prompts");
  add_common(pre, c, false);
  pre->callback([&] {
    const RunConfig cfg = load(c);
    RunSummary summary = open_summary(c, cfg, "pretrain-backbone");
    const Vocabulary vocab(cfg.vocab_size);
    const TaskSplits s = generate_task(vocab, cfg.seed, cfg.train_sizes, cfg.eval_sizes);
    PretrainReport rep;
    const Backbone bb = pretrain_backbone(cfg.backbone, vocab, s, cfg.pretrain, &rep);
    const fs::path path = fs::path(c.out) / "backbone.ckpt";
    summary.artifact("backbone", path, write_checkpoint(path, backbone_checkpoint(bb)));
    const PretrainEpoch& last = rep.epochs.back();
    fmt::print("backbone {} | eval refusal edit {:.1f}% harmful {:.1f}% benign {:.1f}%\n", path.string(),
               100 * last.edit_refusal, 100 * last.harmful_refusal, 100 * last.benign_refusal);
  });

  // cache-features
  auto* cache = app.add_subcommand("cache-features", "Build the frozen-base training cache and report its contents");
  add_common(cache, c, true);
  cache->callback([&] {
    const RunConfig cfg = load(c);
    RunSummary summary = open_summary(c, cfg, "cache-features");
    const PreparedRun run = prepare_run(cfg, summary, pipeline_options(c, "cache-features"));
    const json j = {{"edits", run.cache.edits.size()},
                    {"benign", run.cache.benign.size()},
                    {"harmful", run.cache.harmful.size()},
                    {"filtered_edits", run.cache.filtered_edits},
                    {"horizon", run.cache.horizon},
                    {"top_k", run.cache.top_k},
                    {"backbone_checksum", run.backbone->checksum()}};
    write_text(fs::path(c.out) / "cache.json", j.dump(2) + "\n");
    fmt::print("cache: {} edits ({} filtered), {} benign, {} harmful\n", run.cache.edits.size(),
               run.cache.filtered_edits.size(), run.cache.benign.size(), run.cache.harmful.size());
  });

  // train
  std::string stages = "gate,warmup,fit";
  std::string from;
  auto* train = app.add_subcommand("train", "Train the controller through the selected stages");
  add_common(train, c, true);
  train->add_option("--stages", stages, "Comma-separated subset of gate,warmup,fit (in order)");
  train->add_option("--from", from, "Resume from a controller checkpoint");
  train->callback([&] {
    const RunConfig cfg = load(c);
    RunSummary summary = open_summary(c, cfg, "train");
    const PreparedRun run = prepare_run(cfg, summary, pipeline_options(c, "train"));
    ControllerParams p = from.empty() ? ControllerParams::init(cfg.controller, run.backbone->width()) : load_controller(from);
    for (const std::string& st : split_csv(stages)) {
      StageLog log;
      TrainingTranscript tr;
      if (st == "gate") {
        pretrain_gate(p, run.cache, cfg.schedule, &log);
        tr.stages.push_back(log);
      } else if (st == "warmup") {
        contrastive_warmup(p, *run.backbone, run.cache, cfg.weights, cfg.schedule, &log);
        tr.stages.push_back(log);
      } else if (st == "fit") {
        supervised_fit(p, *run.backbone, run.cache, cfg.weights, cfg.schedule, &tr);
      } else {
        throw ConfigError("unknown stage '" + st + "' (expected gate, warmup or fit)");
      }
      summary.event("transcript", to_json(tr));
      const fs::path path = fs::path(c.out) / ("controller-" + st + ".ckpt");
      summary.artifact("controller-" + st, path,
                       write_checkpoint(path, controller_checkpoint(p, cfg.controller, run.backbone->width(), st)));
      fmt::print("stage {} done -> {}\n", st, path.string());
    }
  });

  // calibrate-gate
  std::string controller_path;
  auto* cal = app.add_subcommand("calibrate-gate", "Select the gate policy on the calibration subset");
  add_common(cal, c, true);
  cal->add_option("--controller", controller_path, "Fitted controller checkpoint")->required();
  cal->callback([&] {
    const RunConfig cfg = load(c);
    RunSummary summary = open_summary(c, cfg, "calibrate-gate");
    const PreparedRun run = prepare_run(cfg, summary, pipeline_options(c, "calibrate-gate"));
    ControllerParams p = load_controller(controller_path);
    const GateCalibration g = calibrate_gate(p, *run.backbone, run.cache, cfg.schedule, *run.judge);
    const json j = to_json(g);
    write_text(fs::path(c.out) / "calibration.json", j.dump(2) + "\n");
    const fs::path path = fs::path(c.out) / "controller-calibrated.ckpt";
    summary.artifact("controller-calibrated", path,
                     write_checkpoint(path, controller_checkpoint(p, cfg.controller, run.backbone->width(), "calibrated")));
    print_rendered(render(calibration_rows(j), calibration_table_spec()));
  });

  // fit-veto
  auto* veto = app.add_subcommand("fit-veto", "Fit the harmful-keep veto on training boundary features");
  add_common(veto, c, true);
  veto->callback([&] {
    const RunConfig cfg = load(c);
    RunSummary summary = open_summary(c, cfg, "fit-veto");
    const PreparedRun run = prepare_run(cfg, summary, pipeline_options(c, "fit-veto"));
    auto [model, calib] = fit_run_veto(run, cfg.veto);
    const fs::path path = fs::path(c.out) / "veto.ckpt";
    summary.artifact("veto", path, write_checkpoint(path, veto_checkpoint(model)));
    summary.event("veto", to_json(calib));
    fmt::print("veto accuracy {:.3f} | edit false vetoes {:.3f} | benign false vetoes {:.3f} | harmful recall {:.3f}\n",
               calib.accuracy, calib.edit_false_veto_rate, calib.benign_false_veto_rate, calib.harmful_recall);
  });

  // eval
  std::string route = "calibrated", veto_flag = "on", veto_path;
  std::optional<double> threshold, scale;
  auto* ev = app.add_subcommand("eval", "Evaluate a controller on the eval split");
  add_common(ev, c, true);
  ev->add_option("--controller", controller_path, "Controller checkpoint")->required();
  ev->add_option("--route", route, "calibrated|soft|hard|thresholded|oracle")
      ->check(CLI::IsMember({"calibrated", "soft", "hard", "thresholded", "oracle"}));
  ev->add_option("--threshold", threshold, "Gate threshold for hard/thresholded routes");
  ev->add_option("--veto", veto_flag, "on|off")->check(CLI::IsMember({"on", "off"}));
  ev->add_option("--veto-checkpoint", veto_path, "Veto checkpoint (refit when omitted)");
  ev->add_option("--scale", scale, "Override the controller scale s");
  ev->callback([&] {
    const RunConfig cfg = load(c);
    RunSummary summary = open_summary(c, cfg, "eval");
    const PreparedRun run = prepare_run(cfg, summary, pipeline_options(c, "eval"));
    ControllerParams p = load_controller(controller_path);
    if (scale.has_value()) {
      if (!(*scale >= 0.0)) throw ConfigError("--scale must be non-negative");
      p.scale = *scale;
    }
    const GatePolicy policy = route_policy(route, threshold, p);
    std::optional<VetoModel> v;
    if (veto_flag == "on" && policy.kind != GateKind::oracle) {
      v = veto_path.empty() ? fit_run_veto(run, cfg.veto).first : veto_from_checkpoint(read_checkpoint(veto_path));
    }
    const ControllerIntervention iv(*run.backbone, p, policy, v);
    const bool oracle = policy.kind == GateKind::oracle;
    const EvalReport rep = evaluate(*run.backbone, iv, run.splits.eval, run.base, *run.judge, {route, oracle});
    const json report = {{"config_digest", config_digest(cfg)},
                         {"rows", json::array({to_json(base_report(run.splits.eval, run.base)), to_json(rep)})}};
    write_report(c.out, config_digest(cfg), report, &summary);
    print_rendered(render_run_report(report));
  });

  // diagnose-trajectory
  auto* diag = app.add_subcommand("diagnose-trajectory", "Trajectory alignment diagnostics on the eval split");
  add_common(diag, c, true);
  diag->add_option("--controller", controller_path, "Calibrated controller checkpoint")->required();
  diag->add_option("--veto-checkpoint", veto_path, "Veto checkpoint (refit when omitted)");
  diag->callback([&] {
    const RunConfig cfg = load(c);
    RunSummary summary = open_summary(c, cfg, "diagnose-trajectory");
    const PreparedRun run = prepare_run(cfg, summary, pipeline_options(c, "diagnose-trajectory"));
    const ControllerParams p = load_controller(controller_path);
    std::optional<VetoModel> v;
    if (cfg.veto.enabled) {
      v = veto_path.empty() ? fit_run_veto(run, cfg.veto).first : veto_from_checkpoint(read_checkpoint(veto_path));
    }
    const ControllerIntervention iv(*run.backbone, p, p.policy, v);
    const TrajectoryReport t =
        diagnose_trajectories(*run.backbone, iv, run.vocab, run.splits.eval, p.intervention_layers, cfg.schedule.horizon);
    const json report = {{"config_digest", config_digest(cfg)}, {"trajectory", to_json(t)}};
    write_report(c.out, config_digest(cfg), report, &summary);
    print_rendered(render_run_report(report));
  });

  // baseline
  std::string method = "actadd", routing = "global", scales_csv, probe_path;
  auto* base = app.add_subcommand("baseline", "One-direction steering sweep (ActAdd or DIM)");
  add_common(base, c, true);
  base->add_option("--method", method, "actadd|dim")->check(CLI::IsMember({"actadd", "dim"}));
  base->add_option("--routing", routing, "Comma-separated subset of global,probe,probe_veto,oracle");
  base->add_option("--scales", scales_csv, "Comma-separated scales (default from config)");
  base->add_option("--probe", probe_path, "Controller checkpoint after gate pretraining (probe routings)");
  base->add_option("--veto-checkpoint", veto_path, "Veto checkpoint for probe_veto (refit when omitted)");
  base->callback([&] {
    const RunConfig cfg = load(c);
    RunSummary summary = open_summary(c, cfg, "baseline");
    const PreparedRun run = prepare_run(cfg, summary, pipeline_options(c, "baseline"));
    std::vector<SteeringRouting> routings;
    for (const auto& r : split_csv(routing)) routings.push_back(parse_steering_routing(r));
    std::vector<double> scales = cfg.baselines.scales;
    if (!scales_csv.empty()) {
      scales.clear();
      for (const auto& s : split_csv(scales_csv)) {
        try {
          scales.push_back(std::stod(s));
        } catch (const std::exception&) {
          throw ConfigError("bad scale '" + s + "'");
        }
      }
    }
    TrainedController t;
    t.params = ControllerParams::init(cfg.controller, run.backbone->width());
    const bool probed = std::any_of(routings.begin(), routings.end(), [](SteeringRouting r) {
      return r == SteeringRouting::probe || r == SteeringRouting::probe_veto;
    });
    if (probed) {
      if (probe_path.empty()) throw ConfigError("probe routings need --probe");
      t.params = load_controller(probe_path);
      t.probe = t.params.router;
      t.veto = veto_path.empty() ? fit_run_veto(run, cfg.veto).first : veto_from_checkpoint(read_checkpoint(veto_path));
    }
    const SweepResult s = run_baseline(run, t, parse_steering_source(method), routings, scales, cfg.baselines.benign_floor);
    const json report = {{"config_digest", config_digest(cfg)}, {"baselines", json::array({to_json(s)})}};
    write_report(c.out, config_digest(cfg), report, &summary);
    print_rendered(render_run_report(report));
  });

  // ablate
  std::string variants = "full,uniform_mixture,no_warmup,late_layers";
  auto* abl = app.add_subcommand("ablate", "Design ablations under the fixed supervised-step budget");
  add_common(abl, c, true);
  abl->add_option("--variants", variants, "Comma-separated ablation variants");
  abl->callback([&] {
    const RunConfig cfg = load(c);
    RunSummary summary = open_summary(c, cfg, "ablate");
    const PreparedRun run = prepare_run(cfg, summary, pipeline_options(c, "ablate"));
    json rows = json::array();
    for (const auto& v : split_csv(variants)) rows.push_back(to_json(run_ablation(run, parse_ablation_variant(v), summary), false));
    const json report = {{"config_digest", config_digest(cfg)}, {"ablations", rows}};
    write_report(c.out, config_digest(cfg), report, &summary);
    print_rendered(render_run_report(report));
  });

  // run
  auto* all = app.add_subcommand("run", "Full pipeline: cache, train, calibrate, veto, evaluate, diagnose, report");
  add_common(all, c, true);
  all->callback([&] {
    const RunConfig cfg = load(c);
    const PipelineResult r = run_pipeline(cfg, pipeline_options(c, "run"));
    print_rendered(render_run_report(r.report));
    fmt::print("config digest {}\n", r.config_digest);
  });

  // report
  std::string input;
  bool tsv = false;
  auto* rep = app.add_subcommand("report", "Render tables from a report JSON");
  rep->add_option("input", input, "Report JSON")->required()->check(CLI::ExistingFile);
  rep->add_flag("--tsv", tsv, "Emit tab-separated output");
  rep->callback([&] {
    std::ifstream in(input);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(input + ": " + e.what());
    }
    const Rendered r = render_run_report(j);
    std::cout << (tsv ? r.tsv : r.text);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  return 0;
}

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ContractViolation& e) {
    fmt::print(stderr, "contract violation: {}\n", e.what());
    return 1;
  } catch (const ConfigError& e) {
    fmt::print(stderr, "configuration error: {}\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    fmt::print(stderr, "numeric error: {}\n", e.what());
    return 3;
  } catch (const nlohmann::json::exception& e) {
    fmt::print(stderr, "configuration error: {}\n", e.what());
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    fmt::print(stderr, "configuration error: {}\n", e.what());
    return 2;
  }
}
