// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include "paving/baselines.hpp"

#include <fmt/format.h>

#include <cmath>

#include "paving/checksum.hpp"
#include "paving/errors.hpp"

namespace paving {

using num::Array;
using num::Tape;
using num::Var;

std::string to_string(SteeringSource s) { return s == SteeringSource::actadd_edit_target ? "actadd" : "dim"; }

SteeringSource parse_steering_source(const std::string& name) {
  if (name == "actadd") return SteeringSource::actadd_edit_target;
  if (name == "dim") return SteeringSource::dim_refusal;
  throw ConfigError("unknown steering method '" + name + "' (expected actadd or dim)");
}

std::string to_string(SteeringRouting r) {
  switch (r) {
    case SteeringRouting::global: return "global";
    case SteeringRouting::probe: return "probe";
    case SteeringRouting::probe_veto: return "probe_veto";
    case SteeringRouting::oracle: return "oracle";
  }
  return "global";
}

SteeringRouting parse_steering_routing(const std::string& name) {
  if (name == "global") return SteeringRouting::global;
  if (name == "probe") return SteeringRouting::probe;
  if (name == "probe_veto" || name == "probe-veto") return SteeringRouting::probe_veto;
  if (name == "oracle") return SteeringRouting::oracle;
  throw ConfigError("unknown steering routing '" + name + "' (expected global, probe, probe_veto or oracle)");
}

namespace {

void finish_direction(SteeringDirection& d, std::size_t count) {
  double n2 = 0.0;
  for (double& v : d.vector.data()) {
    v /= static_cast<double>(count);
    n2 += v * v;
  }
  d.norm = std::sqrt(n2);
  require(std::isfinite(d.norm), "steering direction is not finite");
}

void accumulate_row(Array& acc, std::span<const double> row, double sign) {
  for (std::size_t j = 0; j < row.size(); ++j) acc[j] += sign * row[j];
}

}  // namespace

SteeringDirection fit_actadd(const Backbone& backbone, const Vocabulary& vocab, const std::vector<PromptRecord>& train,
                             int read_layer) {
  require_config(read_layer >= 0 && read_layer <= backbone.n_layers(), "fit_actadd: read layer out of range");
  SteeringDirection d;
  d.source = SteeringSource::actadd_edit_target;
  d.read_layer = read_layer;
  d.read_position = "final prompt token (teacher prompt minus prompt)";
  d.fit_split = "train";
  d.vector = Array(1, static_cast<std::size_t>(backbone.width()));
  const auto layer = static_cast<std::size_t>(read_layer);
  std::size_t count = 0;
  for (const PromptRecord& r : train) {
    if (r.bucket != Bucket::edit) continue;
    const Tokens teacher = vocab.teacher_prompt(r.tokens);
    const ResidualTrace target = backbone.forward(teacher);
    const ResidualTrace base = backbone.forward(r.tokens);
    accumulate_row(d.vector, target.states[layer].row(teacher.size() - 1), 1.0);
    accumulate_row(d.vector, base.states[layer].row(r.tokens.size() - 1), -1.0);
    ++count;
  }
  require_config(count > 0, "fit_actadd: no edit prompts in the training split");
  finish_direction(d, count);
  return d;
}

SteeringDirection fit_dim(const Backbone& backbone, const std::vector<PromptRecord>& train, int read_layer) {
  require_config(read_layer >= 0 && read_layer <= backbone.n_layers(), "fit_dim: read layer out of range");
  const std::size_t d = static_cast<std::size_t>(backbone.width());
  Array benign(1, d), harmful(1, d);
  std::size_t nb = 0, nh = 0;
  for (const PromptRecord& r : train) {
    if (r.bucket == Bucket::edit) continue;
    const ResidualTrace tr = backbone.forward(r.tokens);
    const auto row = tr.states[static_cast<std::size_t>(read_layer)].row(r.tokens.size() - 1);
    if (r.bucket == Bucket::benign_keep) {
      accumulate_row(benign, row, 1.0);
      ++nb;
    } else {
      accumulate_row(harmful, row, 1.0);
      ++nh;
    }
  }
  require_config(nb > 0 && nh > 0, "fit_dim: both keep buckets must be non-empty");
  SteeringDirection out;
  out.source = SteeringSource::dim_refusal;
  out.read_layer = read_layer;
  out.read_position = "final prompt token";
  out.fit_split = "train";
  out.vector = Array(1, d);
  double n2 = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    out.vector[j] = benign[j] / static_cast<double>(nb) - harmful[j] / static_cast<double>(nh);
    n2 += out.vector[j] * out.vector[j];
  }
  out.norm = std::sqrt(n2);
  return out;
}

namespace {

class SteeringHook : public ResidualHook {
 public:
  SteeringHook(const Array& direction, const std::vector<int>& layers, double magnitude)
      : direction_(direction), layers_(layers), magnitude_(magnitude) {}

  bool active(int layer) const override {
    return magnitude_ != 0.0 && std::find(layers_.begin(), layers_.end(), layer) != layers_.end();
  }

  Var edit(Tape& tape, int /*layer*/, Var states) override {
    Array delta(states.rows(), states.cols());
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      for (std::size_t c = 0; c < delta.cols(); ++c) delta(r, c) = magnitude_ * direction_[c];
    }
    return tape.constant(std::move(delta), "steering");
  }

 private:
  const Array& direction_;
  const std::vector<int>& layers_;
  double magnitude_;
};

}  // namespace

SteeringIntervention::SteeringIntervention(const Backbone& backbone, SteeringDirection direction,
                                           std::vector<int> intervention_layers, double scale, SteeringRouting routing,
                                           std::optional<RouterParams> probe, std::vector<int> route_layers,
                                           std::optional<VetoModel> veto)
    : backbone_(backbone),
      direction_(std::move(direction)),
      layers_(std::move(intervention_layers)),
      scale_(scale),
      routing_(routing),
      probe_(std::move(probe)),
      route_layers_(std::move(route_layers)),
      veto_(std::move(veto)) {
  require_config(std::isfinite(scale_) && scale_ >= 0.0, "steering: scale must be finite and non-negative");
  const bool probed = routing_ == SteeringRouting::probe || routing_ == SteeringRouting::probe_veto;
  require_config(!probed || probe_.has_value(), "steering: probe routing needs the pretrained gate");
  require_config(routing_ != SteeringRouting::probe_veto || veto_.has_value(), "steering: probe_veto routing needs a veto");
}

RouteDecision SteeringIntervention::decide(std::span<const int> prompt, std::optional<int> oracle_label) const {
  require(oracle_label.has_value() == (routing_ == SteeringRouting::oracle),
          "route labels may reach the gate only under oracle routing");
  RouteDecision d;
  switch (routing_) {
    case SteeringRouting::global: d.gamma = 1.0; break;
    case SteeringRouting::oracle: d.gamma = static_cast<double>(*oracle_label); break;
    case SteeringRouting::probe:
    case SteeringRouting::probe_veto: {
      const Array z = boundary_feature(backbone_, prompt, route_layers_);
      d.gate_logit = route(z, *probe_).gate_logit;
      d.gamma = d.gate_logit > 0.0 ? 1.0 : 0.0;
      if (routing_ == SteeringRouting::probe_veto) d.veto_mask = veto_mask(*veto_, z);
      break;
    }
  }
  return d;
}

std::unique_ptr<ResidualHook> SteeringIntervention::hook(const RouteDecision& decision) const {
  return std::make_unique<SteeringHook>(direction_.vector, layers_, scale_ * decision.effective_gate());
}

std::string SteeringIntervention::checksum() const {
  Sha256 h;
  h.update(to_string(direction_.source));
  h.update_doubles(direction_.vector.data());
  h.update(fmt::format("layer={};scale={:.17g}", direction_.read_layer, scale_));
  return h.hex_digest();
}

SweepResult apply_and_sweep(const Backbone& backbone, const SteeringDirection& direction,
                            const std::vector<int>& intervention_layers, const std::vector<int>& route_layers,
                            const std::optional<RouterParams>& probe, const std::optional<VetoModel>& veto,
                            const std::vector<PromptRecord>& records, const BaseReference& base, const Judge& judge,
                            const SweepOptions& options) {
  require_config(!options.scales.empty() && !options.routings.empty(), "sweep: empty scale or routing grid");
  SweepResult out;
  out.direction = direction;
  for (SteeringRouting routing : options.routings) {
    for (double s : options.scales) {
      const SteeringIntervention iv(backbone, direction, intervention_layers, s, routing, probe, route_layers, veto);
      EvalOptions eo;
      eo.name = fmt::format("{}-{}-s{:g}", to_string(direction.source), to_string(routing), s);
      eo.oracle = routing == SteeringRouting::oracle;
      SweepRow row{s, routing, evaluate(backbone, iv, records, base, judge, eo), false};
      row.meets_floor = row.report.benign.preservation >= options.benign_floor;
      out.rows.push_back(std::move(row));
    }
  }
  auto better = [&](std::size_t i, const std::optional<std::size_t>& best) {
    if (!best.has_value()) return true;
    const SweepRow& r = out.rows[i];
    const SweepRow& b = out.rows[*best];
    return r.report.control_score > b.report.control_score ||
           (r.report.control_score == b.report.control_score && r.scale < b.scale);
  };
  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    const SweepRow& r = out.rows[i];
    if (r.routing != SteeringRouting::global) continue;
    if (better(i, out.selected_unconstrained)) out.selected_unconstrained = i;
    if (r.meets_floor && better(i, out.selected)) out.selected = i;
  }
  return out;
}

}  // namespace paving
