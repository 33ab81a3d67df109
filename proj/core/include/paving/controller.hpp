// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "paving/backbone.hpp"

namespace paving {

enum class GateKind { soft, hard, thresholded_soft, oracle };

std::string to_string(GateKind kind);
GateKind parse_gate_kind(const std::string& name);

struct GatePolicy {
  GateKind kind = GateKind::thresholded_soft;
  double threshold = -0.2564;
};

/// Router over normalized boundary features: one gate logit plus K mixture logits.
struct RouterParams {
  num::Array norm_mean, norm_std;  // 1 x input_dim
  num::Array w1, b1;               // input_dim -> hidden
  num::Array w_gate, b_gate;       // hidden -> 1
  num::Array w_mix, b_mix;         // hidden -> K

  std::size_t input_dim() const { return w1.rows(); }
  std::size_t hidden_dim() const { return w1.cols(); }
  std::size_t experts() const { return w_mix.cols(); }
};

struct ExpertParams {
  num::Array w_down, b_down;  // d -> b
  num::Array w_up, b_up;      // b -> d
  double center = 0.5;        // window center over normalized L_I position
  double width = 0.2;
};

struct ControllerConfig {
  int experts = 3;
  int bottleneck = 0;  // 0 selects width / 8
  int router_hidden = 64;
  double scale = 8.0;
  std::vector<int> route_layers{1, 2};
  std::vector<int> intervention_layers{3, 4, 5, 6, 7, 8};
  std::vector<double> window_centers{0.30, 0.55, 0.80};
  std::vector<double> window_widths{0.15, 0.20, 0.15};
  double gain_clip = 4.0;
  double expert_init_std = 1e-3;
  bool uniform_mixture = false;
  std::uint64_t seed = 11;

  void validate(int n_layers, int width) const;
};

/// Training stages completed on a controller, in order.
struct StageFlags {
  bool gate_pretrained = false;
  bool warmed_up = false;
  bool fitted = false;
  bool calibrated = false;
  std::size_t fit_steps = 0;  // supervised optimizer steps taken so far
  friend bool operator==(const StageFlags&, const StageFlags&) = default;
};

struct ControllerParams {
  RouterParams router;
  std::vector<ExpertParams> experts;
  double scale = 8.0;
  double gain_clip = 4.0;
  std::vector<int> route_layers;
  std::vector<int> intervention_layers;
  bool uniform_mixture = false;
  GatePolicy policy;
  StageFlags stages;

  static ControllerParams init(const ControllerConfig& cfg, int width);

  std::vector<std::pair<std::string, num::Array*>> named_router();
  std::vector<std::pair<std::string, num::Array*>> named_experts();
  std::vector<std::pair<std::string, num::Array*>> named();
  std::vector<std::pair<std::string, const num::Array*>> named() const;
  /// Restores trainable arrays by name; structure comes from `like`.
  static ControllerParams from_named(const ControllerParams& like, const std::map<std::string, num::Array>& arrays);

  std::string router_checksum() const;
  std::string experts_checksum() const;
};

/// Route output for one prompt.
struct Route {
  double gate_logit = 0.0;
  std::vector<double> mixture;
};

/// Concatenation over ascending route layers of the final-prompt-token state.
num::Array boundary_feature(const ResidualTrace& trace, const std::vector<int>& route_layers);
num::Array boundary_feature(const Backbone& backbone, std::span<const int> prompt, const std::vector<int>& route_layers);

Route route(const num::Array& z, const RouterParams& router);

/// Gate strength under a policy. The oracle kind requires the route label g*.
double gate(const GatePolicy& policy, double gate_logit, std::optional<int> oracle_label = std::nullopt);

/// Gaussian window over the normalized position of `layer` inside L_I.
double window_mask(const ExpertParams& expert, int layer, const std::vector<int>& intervention_layers);

/// One expert's masked, gain-clipped edit for states h (rows are tokens).
num::Array expert_edit(const num::Array& h, std::size_t k, int layer, const ControllerParams& params);

/// s * m * gamma * sum_k w_k expert_edit(h, k, layer).
num::Array residual_edit(const num::Array& h, int layer, double gamma, int veto_mask,
                         const std::vector<double>& mixture, const ControllerParams& params);

/// Controller weights bound onto a tape (trainable or frozen).
struct BoundRouter {
  num::Var w1, b1, w_gate, b_gate, w_mix, b_mix;
};
struct BoundExpert {
  num::Var w_down, b_down, w_up, b_up;
};
struct BoundController {
  BoundRouter router;
  std::vector<BoundExpert> experts;
  std::vector<num::Var> trainable;  // same order as ControllerParams::named()
};

BoundController bind_controller(num::Tape& tape, const ControllerParams& params, bool trainable_router,
                                bool trainable_experts);

struct TapeRoute {
  num::Var gate_logit;  // 1 x 1
  num::Var mixture;     // 1 x K
};

/// Routes a normalized-on-the-fly boundary feature on the tape.
TapeRoute route_on_tape(num::Tape& tape, const BoundRouter& router, const RouterParams& stats, const num::Array& z);

/// Residual hook applying the composed controller edit at every position of each L_I layer.
class ControllerHook : public ResidualHook {
 public:
  /// `gate` is the 1x1 effective gate m * gamma; `mixture` is 1 x K.
  ControllerHook(const ControllerParams& params, const BoundController& bound, num::Var gate, num::Var mixture);

  bool active(int layer) const override;
  num::Var edit(num::Tape& tape, int layer, num::Var states) override;

 private:
  const ControllerParams& params_;
  const BoundController& bound_;
  num::Var gate_;
  num::Var mixture_;
  bool gate_is_zero_;
};

/// Evaluation-time hook owning its own bindings. With gate == 0 it never activates.
class FrozenControllerHook : public ResidualHook {
 public:
  FrozenControllerHook(const ControllerParams& params, double effective_gate, std::vector<double> mixture);

  bool active(int layer) const override;
  num::Var edit(num::Tape& tape, int layer, num::Var states) override;

 private:
  const ControllerParams& params_;
  double gate_;
  std::vector<double> mixture_;
};

}  // namespace paving
