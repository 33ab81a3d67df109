// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include "paving/controller.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "paving/checksum.hpp"
#include "paving/errors.hpp"
#include "paving/rng.hpp"

namespace paving {

using num::Array;
using num::Tape;
using num::Var;

std::string to_string(GateKind kind) {
  switch (kind) {
    case GateKind::soft: return "soft";
    case GateKind::hard: return "hard";
    case GateKind::thresholded_soft: return "thresholded_soft";
    case GateKind::oracle: return "oracle";
  }
  return "unknown";
}

GateKind parse_gate_kind(const std::string& name) {
  if (name == "soft") return GateKind::soft;
  if (name == "hard") return GateKind::hard;
  if (name == "thresholded_soft" || name == "thresholded") return GateKind::thresholded_soft;
  if (name == "oracle") return GateKind::oracle;
  throw ConfigError("unknown gate policy '" + name + "'");
}

void ControllerConfig::validate(int n_layers, int width) const {
  require_config(experts >= 1, "controller: experts must be positive");
  require_config(router_hidden >= 1, "controller: router_hidden must be positive");
  const int b = bottleneck == 0 ? std::max(1, width / 8) : bottleneck;
  require_config(b >= 1 && b < width, "controller: bottleneck must satisfy 1 <= b < width");
  require_config(std::isfinite(scale) && scale >= 0.0, "controller: scale must be finite and non-negative");
  require_config(gain_clip > 0.0, "controller: gain_clip must be positive");
  require_config(!route_layers.empty() && !intervention_layers.empty(), "controller: layer sets must be nonempty");
  require_config(std::is_sorted(route_layers.begin(), route_layers.end()) &&
                     std::adjacent_find(route_layers.begin(), route_layers.end()) == route_layers.end(),
                 "controller: route_layers must be strictly ascending");
  require_config(std::is_sorted(intervention_layers.begin(), intervention_layers.end()) &&
                     std::adjacent_find(intervention_layers.begin(), intervention_layers.end()) ==
                         intervention_layers.end(),
                 "controller: intervention_layers must be strictly ascending");
  require_config(route_layers.front() >= 0 && intervention_layers.back() <= n_layers,
                 "controller: layer index out of range");
  require_config(intervention_layers.front() >= 1, "controller: intervention layers start at 1");
  require_config(route_layers.back() < intervention_layers.front(),
                 "controller: max(route_layers) must precede min(intervention_layers)");
  require_config(window_centers.size() == static_cast<std::size_t>(experts) &&
                     window_widths.size() == static_cast<std::size_t>(experts),
                 "controller: one window center and width per expert");
  for (std::size_t k = 0; k < window_centers.size(); ++k) {
    require_config(window_centers[k] >= 0.0 && window_centers[k] <= 1.0, "controller: window centers lie in [0,1]");
    require_config(window_widths[k] > 0.0, "controller: window widths must be positive");
  }
}

namespace {

Array normal_array(Rng& rng, std::size_t rows, std::size_t cols, double std) {
  Array a(rows, cols);
  for (double& v : a.data()) v = std * rng.normal();
  return a;
}

double normalized_position(int layer, const std::vector<int>& li) {
  if (li.front() == li.back()) return 0.5;
  return static_cast<double>(layer - li.front()) / static_cast<double>(li.back() - li.front());
}

bool contains(const std::vector<int>& set, int v) { return std::find(set.begin(), set.end(), v) != set.end(); }

Array normalize(const Array& z, const RouterParams& r) {
  require_config(z.rows() == 1 && z.cols() == r.input_dim(),
                 "route: feature has shape " + num::shape_string(z) + ", router expects 1x" +
                     std::to_string(r.input_dim()));
  Array out(1, z.cols());
  for (std::size_t i = 0; i < z.cols(); ++i) out[i] = (z[i] - r.norm_mean[i]) / r.norm_std[i];
  return out;
}

}  // namespace

ControllerParams ControllerParams::init(const ControllerConfig& cfg, int width) {
  const auto d = static_cast<std::size_t>(width);
  const auto b = static_cast<std::size_t>(cfg.bottleneck == 0 ? std::max(1, width / 8) : cfg.bottleneck);
  const auto in = cfg.route_layers.size() * d;
  const auto hid = static_cast<std::size_t>(cfg.router_hidden);
  const auto k = static_cast<std::size_t>(cfg.experts);
  Rng rng(cfg.seed);

  ControllerParams p;
  p.router.norm_mean = Array(1, in);
  p.router.norm_std = Array(1, in, 1.0);
  p.router.w1 = normal_array(rng, in, hid, 1.0 / std::sqrt(static_cast<double>(in)));
  p.router.b1 = Array(1, hid);
  p.router.w_gate = normal_array(rng, hid, 1, 0.1 / std::sqrt(static_cast<double>(hid)));
  p.router.b_gate = Array(1, 1);
  p.router.w_mix = normal_array(rng, hid, k, 0.1 / std::sqrt(static_cast<double>(hid)));
  p.router.b_mix = Array(1, k);
  for (std::size_t e = 0; e < k; ++e) {
    ExpertParams ex;
    ex.w_down = normal_array(rng, d, b, 1.0 / std::sqrt(static_cast<double>(d)));
    ex.b_down = Array(1, b);
    ex.w_up = normal_array(rng, b, d, cfg.expert_init_std);
    ex.b_up = Array(1, d);
    ex.center = cfg.window_centers[e];
    ex.width = cfg.window_widths[e];
    p.experts.push_back(std::move(ex));
  }
  p.scale = cfg.scale;
  p.gain_clip = cfg.gain_clip;
  p.route_layers = cfg.route_layers;
  p.intervention_layers = cfg.intervention_layers;
  p.uniform_mixture = cfg.uniform_mixture;
  return p;
}

std::vector<std::pair<std::string, Array*>> ControllerParams::named_router() {
  return {{"router.w1", &router.w1},         {"router.b1", &router.b1},
          {"router.w_gate", &router.w_gate}, {"router.b_gate", &router.b_gate},
          {"router.w_mix", &router.w_mix},   {"router.b_mix", &router.b_mix}};
}

std::vector<std::pair<std::string, Array*>> ControllerParams::named_experts() {
  std::vector<std::pair<std::string, Array*>> out;
  for (std::size_t k = 0; k < experts.size(); ++k) {
    ExpertParams& e = experts[k];
    const std::string pre = "expert" + std::to_string(k) + ".";
    out.insert(out.end(), {{pre + "w_down", &e.w_down}, {pre + "b_down", &e.b_down}, {pre + "w_up", &e.w_up},
                           {pre + "b_up", &e.b_up}});
  }
  return out;
}

std::vector<std::pair<std::string, Array*>> ControllerParams::named() {
  auto out = named_router();
  auto ex = named_experts();
  out.insert(out.end(), ex.begin(), ex.end());
  return out;
}

std::vector<std::pair<std::string, const Array*>> ControllerParams::named() const {
  auto mut = const_cast<ControllerParams*>(this)->named();
  std::vector<std::pair<std::string, const Array*>> out;
  out.reserve(mut.size() + 2);
  out.emplace_back("router.norm_mean", &router.norm_mean);
  out.emplace_back("router.norm_std", &router.norm_std);
  for (auto& [name, ptr] : mut) out.emplace_back(name, ptr);
  return out;
}

ControllerParams ControllerParams::from_named(const ControllerParams& like, const std::map<std::string, Array>& arrays) {
  ControllerParams p = like;
  auto take = [&](const std::string& name, Array* dst) {
    auto it = arrays.find(name);
    require_config(it != arrays.end(), "controller checkpoint: missing array '" + name + "'");
    require_config(it->second.same_shape(*dst), "controller checkpoint: array '" + name + "' has shape " +
                                                    num::shape_string(it->second) + ", expected " + num::shape_string(*dst));
    *dst = it->second;
  };
  take("router.norm_mean", &p.router.norm_mean);
  take("router.norm_std", &p.router.norm_std);
  for (auto& [name, ptr] : p.named()) take(name, ptr);
  return p;
}

std::string ControllerParams::router_checksum() const {
  Sha256 h;
  for (const Array* a : {&router.norm_mean, &router.norm_std, &router.w1, &router.b1, &router.w_gate, &router.b_gate,
                         &router.w_mix, &router.b_mix}) {
    h.update_doubles(a->data());
  }
  return h.hex_digest();
}

std::string ControllerParams::experts_checksum() const {
  Sha256 h;
  for (const ExpertParams& e : experts) {
    for (const Array* a : {&e.w_down, &e.b_down, &e.w_up, &e.b_up}) h.update_doubles(a->data());
    const double window[2] = {e.center, e.width};
    h.update_doubles(window);
  }
  const double scalars[2] = {scale, gain_clip};
  h.update_doubles(scalars);
  return h.hex_digest();
}

Array boundary_feature(const ResidualTrace& trace, const std::vector<int>& route_layers) {
  require(trace.prompt_len > 0, "boundary_feature: empty prompt");
  require(!route_layers.empty(), "boundary_feature: route layer set is empty");
  const std::size_t d = trace.states.front().cols();
  Array z(1, route_layers.size() * d);
  for (std::size_t i = 0; i < route_layers.size(); ++i) {
    const int l = route_layers[i];
    require(l >= 0 && static_cast<std::size_t>(l) < trace.states.size(), "boundary_feature: layer out of range");
    const auto row = trace.states[static_cast<std::size_t>(l)].row(trace.prompt_len - 1);
    std::copy(row.begin(), row.end(), z.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return z;
}

Array boundary_feature(const Backbone& backbone, std::span<const int> prompt, const std::vector<int>& route_layers) {
  require(!prompt.empty(), "boundary_feature: empty prompt");
  ResidualTrace trace = backbone.forward(prompt);
  trace.prompt_len = prompt.size();
  return boundary_feature(trace, route_layers);
}

TapeRoute route_on_tape(Tape& tape, const BoundRouter& router, const RouterParams& stats, const Array& z) {
  Var zn = tape.constant(normalize(z, stats), "z");
  Var hidden = num::gelu(num::add_row(num::matmul(zn, router.w1), router.b1));
  Var a = num::add_row(num::matmul(hidden, router.w_gate), router.b_gate);
  Var w = num::softmax_rows(num::add_row(num::matmul(hidden, router.w_mix), router.b_mix));
  return {a, w};
}

Route route(const Array& z, const RouterParams& router) {
  Tape tape;
  BoundRouter bound{tape.reference(router.w1, "router.w1", false),        tape.reference(router.b1, "router.b1", false),
                    tape.reference(router.w_gate, "router.w_gate", false), tape.reference(router.b_gate, "router.b_gate", false),
                    tape.reference(router.w_mix, "router.w_mix", false),   tape.reference(router.b_mix, "router.b_mix", false)};
  TapeRoute r = route_on_tape(tape, bound, router, z);
  Route out;
  out.gate_logit = r.gate_logit.value().item();
  const auto w = r.mixture.value().data();
  out.mixture.assign(w.begin(), w.end());
  return out;
}

double gate(const GatePolicy& policy, double gate_logit, std::optional<int> oracle_label) {
  switch (policy.kind) {
    case GateKind::soft: return num::sigmoid(gate_logit);
    case GateKind::hard: return gate_logit > policy.threshold ? 1.0 : 0.0;
    case GateKind::thresholded_soft: return gate_logit > policy.threshold ? num::sigmoid(gate_logit) : 0.0;
    case GateKind::oracle:
      require(oracle_label.has_value(), "gate: oracle policy requires a route label");
      require(*oracle_label == 0 || *oracle_label == 1, "gate: oracle label must be 0 or 1");
      return static_cast<double>(*oracle_label);
  }
  return 0.0;
}

double window_mask(const ExpertParams& expert, int layer, const std::vector<int>& intervention_layers) {
  require(contains(intervention_layers, layer), "window_mask: layer " + std::to_string(layer) + " is not in L_I");
  const double u = normalized_position(layer, intervention_layers) - expert.center;
  return std::exp(-(u * u) / (2.0 * expert.width * expert.width));
}

namespace {

Var expert_on_tape(const BoundExpert& e, Var h, double mask, double gain_clip) {
  Var hidden = num::gelu(num::add_row(num::matmul(h, e.w_down), e.b_down));
  Var out = num::add_row(num::matmul(hidden, e.w_up), e.b_up);
  return num::scale(num::clip_row_norms(out, h, gain_clip), mask);
}

BoundExpert bind_expert(Tape& tape, const ExpertParams& e, std::size_t k, bool trainable) {
  const std::string pre = "expert" + std::to_string(k) + ".";
  return {tape.reference(e.w_down, pre + "w_down", trainable), tape.reference(e.b_down, pre + "b_down", trainable),
          tape.reference(e.w_up, pre + "w_up", trainable), tape.reference(e.b_up, pre + "b_up", trainable)};
}

/// sum_k w_k expert_k(h) with w given as a 1 x K node (or uniform).
Var mixed_edit(Tape& tape, const ControllerParams& p, const std::vector<BoundExpert>& experts, Var mixture, int layer,
               Var h) {
  Var acc;
  const double uniform = 1.0 / static_cast<double>(experts.size());
  for (std::size_t k = 0; k < experts.size(); ++k) {
    Var e = expert_on_tape(experts[k], h, window_mask(p.experts[k], layer, p.intervention_layers), p.gain_clip);
    Var weighted = p.uniform_mixture ? num::scale(e, uniform) : num::scale_by(e, num::slice_cols(mixture, k, 1));
    acc = acc.valid() ? num::add(acc, weighted) : weighted;
  }
  (void)tape;
  return acc;
}

}  // namespace

Array expert_edit(const Array& h, std::size_t k, int layer, const ControllerParams& params) {
  require(k < params.experts.size(), "expert_edit: expert index out of range");
  require_config(h.cols() == params.experts[k].w_down.rows(), "expert_edit: state width mismatch");
  const double mask = window_mask(params.experts[k], layer, params.intervention_layers);
  Tape tape;
  BoundExpert e = bind_expert(tape, params.experts[k], k, false);
  Var hv = tape.reference(h, "h", false);
  return expert_on_tape(e, hv, mask, params.gain_clip).value();
}

Array residual_edit(const Array& h, int layer, double gamma, int veto_mask, const std::vector<double>& mixture,
                    const ControllerParams& params) {
  require(gamma >= 0.0 && gamma <= 1.0, "residual_edit: gamma must lie in [0,1]");
  require(veto_mask == 0 || veto_mask == 1, "residual_edit: veto mask must be 0 or 1");
  require(mixture.size() == params.experts.size(), "residual_edit: mixture length must equal K");
  require(contains(params.intervention_layers, layer), "residual_edit: layer is not in L_I");
  const double g = params.scale * veto_mask * gamma;
  Array out(h.rows(), h.cols());
  if (g == 0.0) return out;
  const double uniform = 1.0 / static_cast<double>(mixture.size());
  for (std::size_t k = 0; k < params.experts.size(); ++k) {
    const double wk = params.uniform_mixture ? uniform : mixture[k];
    const Array e = expert_edit(h, k, layer, params);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += g * wk * e[i];
  }
  return out;
}

BoundController bind_controller(Tape& tape, const ControllerParams& params, bool trainable_router,
                                bool trainable_experts) {
  BoundController b;
  const RouterParams& r = params.router;
  b.router = {tape.reference(r.w1, "router.w1", trainable_router),
              tape.reference(r.b1, "router.b1", trainable_router),
              tape.reference(r.w_gate, "router.w_gate", trainable_router),
              tape.reference(r.b_gate, "router.b_gate", trainable_router),
              tape.reference(r.w_mix, "router.w_mix", trainable_router),
              tape.reference(r.b_mix, "router.b_mix", trainable_router)};
  b.trainable = {b.router.w1, b.router.b1, b.router.w_gate, b.router.b_gate, b.router.w_mix, b.router.b_mix};
  for (std::size_t k = 0; k < params.experts.size(); ++k) {
    b.experts.push_back(bind_expert(tape, params.experts[k], k, trainable_experts));
    const BoundExpert& e = b.experts.back();
    b.trainable.insert(b.trainable.end(), {e.w_down, e.b_down, e.w_up, e.b_up});
  }
  return b;
}

ControllerHook::ControllerHook(const ControllerParams& params, const BoundController& bound, Var gate, Var mixture)
    : params_(params), bound_(bound), gate_(gate), mixture_(mixture), gate_is_zero_(gate.value().item() == 0.0) {}

bool ControllerHook::active(int layer) const {
  return !gate_is_zero_ && params_.scale != 0.0 && contains(params_.intervention_layers, layer);
}

Var ControllerHook::edit(Tape& tape, int layer, Var states) {
  Var acc = mixed_edit(tape, params_, bound_.experts, mixture_, layer, states);
  return num::scale_by(num::scale(acc, params_.scale), gate_);
}

FrozenControllerHook::FrozenControllerHook(const ControllerParams& params, double effective_gate,
                                           std::vector<double> mixture)
    : params_(params), gate_(effective_gate), mixture_(std::move(mixture)) {
  require(mixture_.size() == params.experts.size(), "controller hook: mixture length must equal K");
}

bool FrozenControllerHook::active(int layer) const {
  return gate_ != 0.0 && params_.scale != 0.0 && contains(params_.intervention_layers, layer);
}

Var FrozenControllerHook::edit(Tape& tape, int layer, Var states) {
  std::vector<BoundExpert> experts;
  for (std::size_t k = 0; k < params_.experts.size(); ++k) experts.push_back(bind_expert(tape, params_.experts[k], k, false));
  Var mixture = tape.constant(Array::row_vector(mixture_), "mixture");
  Var acc = mixed_edit(tape, params_, experts, mixture, layer, states);
  return num::scale(acc, params_.scale * gate_);
}

}  // namespace paving
