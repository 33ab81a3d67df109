// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include "paving/reporting.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>

namespace paving {

using nlohmann::json;

json number_json(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

json to_json(const RateCI& r) {
  return {{"successes", r.successes}, {"n", r.n}, {"rate", r.rate}, {"lower", r.lower}, {"upper", r.upper}};
}

namespace {

json bucket_json(const BucketSummary& s, bool keep) {
  json j = {{"refusal", to_json(s.refusal)},
            {"base_refusal", to_json(s.base_refusal)},
            {"activation_rate", s.activation_rate},
            {"veto_rate", s.veto_rate}};
  if (keep) {
    j["preservation"] = s.preservation;
    j["preservation_pp"] = 100.0 * s.preservation;
  }
  return j;
}

json mean_std_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}, {"n", m.n}}; }

json policy_json(const GatePolicy& p) { return {{"kind", to_string(p.kind)}, {"threshold", number_json(p.threshold)}}; }

json diagnostics_json(const RouteDiagnostics& d) {
  return {{"brier", d.brier},           {"ece", d.ece},
          {"accuracy", d.accuracy},     {"edit_active", d.edit_active},
          {"benign_active", d.benign_active}, {"harmful_active", d.harmful_active}};
}

}  // namespace

json to_json(const EvalReport& r, bool include_prompts) {
  json j = {{"name", r.name},
            {"checkpoint", r.checkpoint},
            {"prompt_digest", r.prompt_digest},
            {"judge", r.judge},
            {"scale", r.scale},
            {"decode_len", r.decode_len},
            {"edit", bucket_json(r.edit, false)},
            {"benign", bucket_json(r.benign, true)},
            {"harmful", bucket_json(r.harmful, true)},
            {"harmful_drift", r.harmful_drift},
            {"edit_success", r.edit_success},
            {"retention", r.retention},
            {"control_score", r.control_score}};
  if (include_prompts) {
    json prompts = json::array();
    for (const PromptOutcome& o : r.prompts) {
      prompts.push_back({{"id", o.id},
                         {"bucket", to_string(o.bucket)},
                         {"gate_logit", o.route.gate_logit},
                         {"gamma", o.route.gamma},
                         {"veto_mask", o.route.veto_mask},
                         {"completion", o.completion},
                         {"category", to_string(o.label.category)},
                         {"refusal", o.label.refusal}});
    }
    j["prompts"] = prompts;
  }
  return j;
}

json to_json(const OracleGaps& g) {
  return {{"route_benign", g.route_benign},
          {"route_harmful", g.route_harmful},
          {"edit", g.edit},
          {"harmful_refusal", g.harmful_refusal}};
}

json to_json(const TrajectoryReport& r) {
  json groups = json::array();
  for (const TrajectoryGroup& g : r.groups) {
    groups.push_back({{"bucket", to_string(g.bucket)},
                      {"n", g.n},
                      {"active_rate", g.active_rate},
                      {"veto_rate", g.veto_rate},
                      {"edit_alignment", mean_std_json(g.edit_alignment)},
                      {"refusal_alignment", mean_std_json(g.refusal_alignment)},
                      {"anchor_nll_effect", mean_std_json(g.anchor_nll_effect)},
                      {"base_path_rms", mean_std_json(g.base_path_rms)},
                      {"excluded_zero_displacement", g.excluded_zero_displacement},
                      {"excluded_no_refusal", g.excluded_no_refusal}});
  }
  json profile = json::array();
  for (std::size_t i = 0; i < r.layer_profile.size(); ++i) {
    profile.push_back({{"layer", r.layers.at(i)}, {"alignment", mean_std_json(r.layer_profile[i])}});
  }
  return {{"groups", groups}, {"layers", r.layers}, {"layer_profile", profile}, {"contrastive_gap", r.contrastive_gap}};
}

json to_json(const SweepResult& s) {
  json rows = json::array();
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    const SweepRow& row = s.rows[i];
    json j = to_json(row.report, false);
    j["method"] = to_string(s.direction.source);
    j["routing"] = to_string(row.routing);
    j["meets_floor"] = row.meets_floor;
    j["selected"] = s.selected.has_value() && *s.selected == i;
    j["selected_unconstrained"] = s.selected_unconstrained.has_value() && *s.selected_unconstrained == i;
    rows.push_back(j);
  }
  return {{"method", to_string(s.direction.source)},
          {"read_layer", s.direction.read_layer},
          {"read_position", s.direction.read_position},
          {"direction_norm", s.direction.norm},
          {"fit_split", s.direction.fit_split},
          {"selected", s.selected.has_value() ? json(*s.selected) : json(nullptr)},
          {"selected_unconstrained",
           s.selected_unconstrained.has_value() ? json(*s.selected_unconstrained) : json(nullptr)},
          {"rows", rows}};
}

json to_json(const GateCalibration& c) {
  json candidates = json::array();
  json best_rows = json::array();
  std::map<GateKind, const CalibrationCandidate*> best;
  for (const CalibrationCandidate& k : c.candidates) {
    auto it = c.best_by_kind.find(k.policy.kind);
    const bool is_best = it != c.best_by_kind.end() && it->second.threshold == k.policy.threshold;
    if (is_best && best.count(k.policy.kind) == 0) best[k.policy.kind] = &k;
    candidates.push_back({{"kind", to_string(k.policy.kind)},
                          {"threshold", number_json(k.policy.threshold)},
                          {"safe_non_refusal", k.components.safe_non_refusal},
                          {"edit_alignment", k.components.edit_alignment},
                          {"benign_preservation", k.components.benign_preservation},
                          {"harmful_retention", k.components.harmful_retention},
                          {"score", k.score},
                          {"selected", k.policy.kind == c.selected.kind && k.policy.threshold == c.selected.threshold}});
  }
  for (const auto& [kind, k] : best) best_rows.push_back(candidates.at(static_cast<std::size_t>(k - c.candidates.data())));
  json by_kind = json::object();
  for (const auto& [kind, p] : c.best_by_kind) by_kind[to_string(kind)] = policy_json(p);
  return {{"selected", policy_json(c.selected)},
          {"best_by_kind", by_kind},
          {"best_rows", best_rows},
          {"candidates", candidates},
          {"raw", diagnostics_json(c.raw)},
          {"selected_view", diagnostics_json(c.selected_view)},
          {"n_prompts", c.n_prompts}};
}

json to_json(const VetoCalibration& c) {
  return {{"accuracy", c.accuracy},
          {"edit_false_veto_rate", c.edit_false_veto_rate},
          {"benign_false_veto_rate", c.benign_false_veto_rate},
          {"harmful_recall", c.harmful_recall},
          {"n", c.n}};
}

json to_json(const TrainingTranscript& t) {
  json stages = json::array();
  for (const StageLog& s : t.stages) {
    json metrics = json::object();
    for (const auto& [k, v] : s.metrics) metrics[k] = number_json(v);
    json losses = json::array();
    for (double l : s.epoch_loss) losses.push_back(number_json(l));
    stages.push_back({{"stage", s.stage}, {"epoch_loss", losses}, {"metrics", metrics}});
  }
  return stages;
}

// ---- rendering ----

namespace {

std::string fixed(const json& v, int decimals, bool sign, const std::string& where) {
  if (v.is_string()) return v.get<std::string>();
  if (!v.is_number()) throw RenderError(where + ": expected a number");
  const double x = v.get<double>();
  return sign ? fmt::format("{:+.{}f}", x, decimals) : fmt::format("{:.{}f}", x, decimals);
}

const json& field(const json& obj, const std::string& pointer, const std::string& where) {
  try {
    return obj.at(json::json_pointer(pointer));
  } catch (const json::exception&) {
    throw RenderError(where + ": missing field " + pointer);
  }
}

std::string cell(const json& row, const ColumnSpec& col, const std::string& where) {
  const json& v = field(row, col.pointer, where);
  if (v.is_null()) return "n/a";
  switch (col.format) {
    case CellFormat::text:
      if (v.is_string()) return v.get<std::string>();
      if (v.is_number_integer()) return std::to_string(v.get<long long>());
      throw RenderError(where + ": expected text");
    case CellFormat::number: return fixed(v, col.decimals, false, where);
    case CellFormat::signed_number: return fixed(v, col.decimals, true, where);
    case CellFormat::ci:
      return "[" + fixed(field(v, "/lower", where), col.decimals, false, where) + ", " +
             fixed(field(v, "/upper", where), col.decimals, false, where) + "]";
    case CellFormat::mean_std: {
      const json& n = field(v, "/n", where);
      if (n.is_number_integer() && n.get<long long>() == 0) return "n/a";
      return fixed(field(v, "/mean", where), col.decimals, false, where) + " ± " +
             fixed(field(v, "/std", where), col.decimals, false, where);
    }
    case CellFormat::flag:
      if (!v.is_boolean()) throw RenderError(where + ": expected a boolean");
      return v.get<bool>() ? "yes" : "no";
  }
  return "";
}

// Display width in code points, so "±" counts as one column.
std::size_t display_width(const std::string& s) {
  return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; }));
}

}  // namespace

Rendered render(const std::vector<json>& rows, const TableSpec& spec) {
  std::vector<std::vector<std::string>> cells;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::vector<std::string> line;
    for (const ColumnSpec& c : spec.columns) {
      line.push_back(cell(rows[r], c, fmt::format("{} row {} column '{}'", spec.title, r, c.header)));
    }
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width;
  for (const ColumnSpec& c : spec.columns) width.push_back(display_width(c.header));
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], display_width(line[i]));
  }
  auto emit = [&](const std::vector<std::string>& line) {
    std::string out;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (i > 0) out += "  ";
      out += line[i];
      if (i + 1 < line.size()) out.append(width[i] - display_width(line[i]), ' ');
    }
    return out + "\n";
  };
  std::vector<std::string> headers;
  for (const ColumnSpec& c : spec.columns) headers.push_back(c.header);
  Rendered out;
  out.text = spec.title + "\n" + emit(headers);
  std::size_t total = 0;
  for (std::size_t w : width) total += w;
  out.text += std::string(total + 2 * (width.empty() ? 0 : width.size() - 1), '-') + "\n";
  for (const auto& line : cells) out.text += emit(line);
  auto tsv_line = [](const std::vector<std::string>& line) {
    std::string s;
    for (std::size_t i = 0; i < line.size(); ++i) s += (i ? "\t" : "") + line[i];
    return s + "\n";
  };
  out.tsv = tsv_line(headers);
  for (const auto& line : cells) out.tsv += tsv_line(line);
  return out;
}

TableSpec main_table_spec() {
  return {"Refusal and preservation",
          {{"Row", "/name"},
           {"Edit ref.", "/edit/refusal/rate", CellFormat::number},
           {"Edit ref. [95% CI]", "/edit/refusal", CellFormat::ci},
           {"P_B", "/benign/preservation_pp", CellFormat::number},
           {"P_H", "/harmful/preservation_pp", CellFormat::number},
           {"Harmful ref.", "/harmful/refusal/rate", CellFormat::number},
           {"Harmful ref. [95% CI]", "/harmful/refusal", CellFormat::ci},
           {"Drift", "/harmful_drift", CellFormat::signed_number}}};
}

TableSpec gap_table_spec() {
  return {"Oracle gaps (pp)",
          {{"G_route_B", "/route_benign", CellFormat::signed_number},
           {"G_route_H", "/route_harmful", CellFormat::signed_number},
           {"G_edit_E", "/edit", CellFormat::signed_number},
           {"G_H", "/harmful_refusal", CellFormat::signed_number},
           {"Keep-side gain", "/keep_side_gain", CellFormat::signed_number}}};
}

TableSpec ablation_table_spec() {
  return {"Design ablations",
          {{"Variant", "/name"},
           {"Edit ref.", "/edit/refusal/rate", CellFormat::number},
           {"Edit ref. [95% CI]", "/edit/refusal", CellFormat::ci},
           {"P_B", "/benign/preservation_pp", CellFormat::number},
           {"Harmful ref.", "/harmful/refusal/rate", CellFormat::number}}};
}

TableSpec trajectory_table_spec() {
  return {"Trajectory diagnostics",
          {{"Bucket", "/bucket"},
           {"n", "/n"},
           {"Active", "/active_rate", CellFormat::number, 2},
           {"cos(DI,DE)", "/edit_alignment", CellFormat::mean_std, 3},
           {"cos(DI,DR)", "/refusal_alignment", CellFormat::mean_std, 3},
           {"Anchor NLL effect", "/anchor_nll_effect", CellFormat::mean_std, 2},
           {"Base-path RMS", "/base_path_rms", CellFormat::mean_std, 4}}};
}

TableSpec layer_profile_spec() {
  return {"Per-layer edit alignment", {{"Layer", "/layer"}, {"cos(DI,DE)", "/alignment", CellFormat::mean_std, 3}}};
}

TableSpec sweep_table_spec() {
  return {"Steering baselines",
          {{"Method", "/method"},
           {"Routing", "/routing"},
           {"Scale", "/scale", CellFormat::number, 1},
           {"Edit ref.", "/edit/refusal/rate", CellFormat::number},
           {"P_B", "/benign/preservation_pp", CellFormat::number},
           {"Harmful ref.", "/harmful/refusal/rate", CellFormat::number},
           {"Score", "/control_score", CellFormat::number, 3},
           {"Floor", "/meets_floor", CellFormat::flag},
           {"Selected", "/selected", CellFormat::flag},
           {"Best any P_B", "/selected_unconstrained", CellFormat::flag}}};
}

TableSpec calibration_table_spec() {
  return {"Gate calibration (best per policy)",
          {{"Policy", "/kind"},
           {"Threshold", "/threshold", CellFormat::number, 3},
           {"1-R_E", "/safe_non_refusal", CellFormat::number, 3},
           {"Align", "/edit_alignment", CellFormat::number, 3},
           {"P_B", "/benign_preservation", CellFormat::number, 3},
           {"Retention", "/harmful_retention", CellFormat::number, 3},
           {"Score", "/score", CellFormat::number, 4},
           {"Selected", "/selected", CellFormat::flag}}};
}

std::vector<json> trajectory_rows(const json& r) { return r.at("groups").get<std::vector<json>>(); }
std::vector<json> layer_profile_rows(const json& r) { return r.at("layer_profile").get<std::vector<json>>(); }
std::vector<json> sweep_rows(const json& r) { return r.at("rows").get<std::vector<json>>(); }
std::vector<json> calibration_rows(const json& r) { return r.at("best_rows").get<std::vector<json>>(); }

Rendered render_run_report(const json& run) {
  Rendered out;
  auto add = [&](const Rendered& r) {
    if (!out.text.empty()) out.text += "\n";
    out.text += r.text;
    out.tsv += "# " + r.text.substr(0, r.text.find('\n')) + "\n" + r.tsv;
  };
  if (run.contains("rows")) add(render(run.at("rows").get<std::vector<json>>(), main_table_spec()));
  if (run.contains("gaps") && !run.at("gaps").is_null()) add(render({run.at("gaps")}, gap_table_spec()));
  if (run.contains("calibration")) add(render(calibration_rows(run.at("calibration")), calibration_table_spec()));
  if (run.contains("ablations")) add(render(run.at("ablations").get<std::vector<json>>(), ablation_table_spec()));
  if (run.contains("trajectory") && !run.at("trajectory").is_null()) {
    add(render(trajectory_rows(run.at("trajectory")), trajectory_table_spec()));
    add(render(layer_profile_rows(run.at("trajectory")), layer_profile_spec()));
  }
  if (run.contains("baselines")) {
    for (const json& s : run.at("baselines")) add(render(sweep_rows(s), sweep_table_spec()));
  }
  return out;
}

}  // namespace paving
