// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include "paving/trajectory.hpp"

#include <cmath>

#include "paving/errors.hpp"
#include "paving/training.hpp"

namespace paving {

using num::Array;

namespace {

Array gather(const ResidualTrace& trace, std::size_t prompt_len, std::size_t steps, const std::vector<int>& layers) {
  const auto pos = step_positions(prompt_len, steps);
  const std::size_t d = trace.states.front().cols();
  Array out(layers.size() * steps, d);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Array& s = trace.states.at(static_cast<std::size_t>(layers[i]));
    for (std::size_t t = 0; t < steps; ++t) {
      const auto src = s.row(pos[t]);
      std::copy(src.begin(), src.end(), out.row(i * steps + t).begin());
    }
  }
  return out;
}

Tokens head(const Tokens& t, std::size_t n) { return Tokens(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(std::min(n, t.size()))); }

std::optional<double> cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return std::nullopt;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

double mean_nll(const ResidualTrace& tr, const Tokens& targets) {
  double nll = 0.0;
  for (std::size_t t = 0; t < tr.steps(); ++t) nll -= num::log_softmax(tr.step_logits.row(t))[static_cast<std::size_t>(targets[t])];
  return nll / static_cast<double>(tr.steps());
}

void validate_layers(const Backbone& bb, const std::vector<int>& layers) {
  require_config(!layers.empty(), "trajectory: empty layer set");
  for (int l : layers) require_config(l >= 0 && l <= bb.n_layers(), "trajectory: layer out of range");
}

}  // namespace

Array displacement(const Array& h, const Array& h0) {
  require(h.same_shape(h0), "displacement: shapes differ (" + num::shape_string(h) + " vs " + num::shape_string(h0) + ")");
  Array d(h.rows(), h.cols());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = h[i] - h0[i];
  return d;
}

TrajectoryRecord build_record(const Backbone& backbone, const Intervention& intervention, const Vocabulary& vocab,
                              const PromptRecord& record, const std::vector<int>& layers, std::size_t horizon) {
  require(record.bucket == Bucket::edit && record.edit_target.has_value(), "build_record: needs an edit prompt with a target");
  validate_layers(backbone, layers);
  TrajectoryRecord r;
  r.id = record.id;
  r.bucket = record.bucket;
  r.layers = layers;
  r.route = intervention.decide(record.tokens, std::nullopt);
  const Tokens base_cont = base_continuation(backbone, record.tokens, horizon);
  const bool refused = !base_cont.empty() && base_cont.front() == tok::kRefuse;
  std::size_t n = std::min(record.edit_target->size(), horizon);
  if (refused) n = std::min(n, base_cont.size());
  require(n >= 1, "build_record: empty aligned length");
  r.steps = n;
  const Tokens ye = head(*record.edit_target, n);
  auto hook = intervention.hook(r.route);
  r.h0 = gather(backbone.teacher_forced_trace(record.tokens, ye, nullptr, n), record.tokens.size(), n, layers);
  r.hi = gather(backbone.teacher_forced_trace(record.tokens, ye, hook.get(), n), record.tokens.size(), n, layers);
  const Tokens teacher = vocab.teacher_prompt(record.tokens);
  r.he = gather(backbone.teacher_forced_trace(teacher, ye, nullptr, n), teacher.size(), n, layers);
  if (refused) {
    const Tokens yr = head(base_cont, n);
    r.hr = gather(backbone.teacher_forced_trace(record.tokens, yr, nullptr, n), record.tokens.size(), n, layers);
  }
  return r;
}

TrajectoryRecord build_keep_record(const Backbone& backbone, const Intervention& intervention,
                                   const PromptRecord& record, const std::vector<int>& layers, std::size_t horizon) {
  require(record.bucket != Bucket::edit, "build_keep_record: needs a keep prompt");
  validate_layers(backbone, layers);
  TrajectoryRecord r;
  r.id = record.id;
  r.bucket = record.bucket;
  r.layers = layers;
  r.route = intervention.decide(record.tokens, std::nullopt);
  const Tokens cont = base_continuation(backbone, record.tokens, horizon);
  r.steps = cont.size();
  auto hook = intervention.hook(r.route);
  r.h0 = gather(backbone.teacher_forced_trace(record.tokens, cont, nullptr, r.steps), record.tokens.size(), r.steps, layers);
  r.hi = gather(backbone.teacher_forced_trace(record.tokens, cont, hook.get(), r.steps), record.tokens.size(), r.steps,
                layers);
  return r;
}

Alignment alignment(const TrajectoryRecord& r) {
  Alignment a;
  const Array di = displacement(r.hi, r.h0);
  if (!r.he.empty()) a.edit = cosine(di.data(), displacement(r.he, r.h0).data());
  if (!r.hr.empty()) a.refusal = cosine(di.data(), displacement(r.hr, r.h0).data());
  return a;
}

std::vector<std::optional<double>> layer_alignment(const TrajectoryRecord& r) {
  std::vector<std::optional<double>> out;
  if (r.he.empty()) return out;
  const Array di = displacement(r.hi, r.h0);
  const Array de = displacement(r.he, r.h0);
  const std::size_t block = r.steps * di.cols();
  for (std::size_t i = 0; i < r.layers.size(); ++i) {
    out.push_back(cosine(di.data().subspan(i * block, block), de.data().subspan(i * block, block)));
  }
  return out;
}

double base_path_rms(const TrajectoryRecord& r) {
  const Array di = displacement(r.hi, r.h0);
  require(!di.empty(), "base_path_rms: empty record");
  double s = 0.0;
  for (double v : di.data()) s += v * v;
  return std::sqrt(s / static_cast<double>(di.size()));
}

double anchor_nll_effect(const Backbone& backbone, const Intervention& intervention, const PromptRecord& record,
                         std::size_t horizon) {
  const RouteDecision d = intervention.decide(record.tokens, std::nullopt);
  if (d.effective_gate() == 0.0) return 0.0;
  const Tokens targets = record.bucket == Bucket::edit ? head(*record.edit_target, horizon)
                                                       : base_continuation(backbone, record.tokens, horizon);
  auto hook = intervention.hook(d);
  const double base = mean_nll(backbone.teacher_forced_trace(record.tokens, targets, nullptr, targets.size()), targets);
  const double edited = mean_nll(backbone.teacher_forced_trace(record.tokens, targets, hook.get(), targets.size()), targets);
  if (record.bucket != Bucket::edit) return edited - base;
  require(base > 0.0, "anchor_nll_effect: base anchor NLL is zero");
  return 100.0 * (base - edited) / base;
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd m;
  m.n = values.size();
  if (values.empty()) return m;
  for (double v : values) m.mean += v;
  m.mean /= static_cast<double>(values.size());
  for (double v : values) m.std += (v - m.mean) * (v - m.mean);
  m.std = std::sqrt(m.std / static_cast<double>(values.size()));
  return m;
}

TrajectoryReport diagnose_trajectories(const Backbone& backbone, const Intervention& intervention,
                                       const Vocabulary& vocab, const std::vector<PromptRecord>& records,
                                       const std::vector<int>& layers, std::size_t horizon) {
  require(!intervention.needs_oracle_label(), "diagnose_trajectories: runs on the learned route only");
  TrajectoryReport rep;
  rep.layers = layers;
  std::vector<std::vector<double>> profile(layers.size());
  double edit_sum = 0.0, refusal_sum = 0.0;
  for (Bucket b : {Bucket::edit, Bucket::benign_keep, Bucket::harmful_keep}) {
    TrajectoryGroup g;
    g.bucket = b;
    std::vector<double> ea, ra, nll, rms;
    std::size_t active = 0, vetoed = 0;
    for (const PromptRecord& p : records) {
      if (p.bucket != b) continue;
      ++g.n;
      const TrajectoryRecord r = b == Bucket::edit ? build_record(backbone, intervention, vocab, p, layers, horizon)
                                                   : build_keep_record(backbone, intervention, p, layers, horizon);
      active += r.route.gamma > 0.0;
      vetoed += r.route.veto_mask == 0;
      rms.push_back(base_path_rms(r));
      nll.push_back(anchor_nll_effect(backbone, intervention, p, horizon));
      if (b != Bucket::edit) continue;
      const Alignment a = alignment(r);
      if (!a.edit.has_value()) {
        ++g.excluded_zero_displacement;
        continue;
      }
      ea.push_back(*a.edit);
      if (a.refusal.has_value()) {
        ra.push_back(*a.refusal);
      } else {
        ++g.excluded_no_refusal;
      }
      const auto per_layer = layer_alignment(r);
      for (std::size_t i = 0; i < per_layer.size(); ++i) {
        if (per_layer[i].has_value()) profile[i].push_back(*per_layer[i]);
      }
    }
    if (g.n > 0) {
      g.active_rate = static_cast<double>(active) / static_cast<double>(g.n);
      g.veto_rate = static_cast<double>(vetoed) / static_cast<double>(g.n);
    }
    g.edit_alignment = mean_std(ea);
    g.refusal_alignment = mean_std(ra);
    g.anchor_nll_effect = mean_std(nll);
    g.base_path_rms = mean_std(rms);
    if (b == Bucket::edit) {
      edit_sum = g.edit_alignment.mean;
      refusal_sum = g.refusal_alignment.mean;
    }
    rep.groups.push_back(g);
  }
  for (const auto& v : profile) rep.layer_profile.push_back(mean_std(v));
  rep.contrastive_gap = edit_sum - refusal_sum;
  return rep;
}

}  // namespace paving
