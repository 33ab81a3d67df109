// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include "paving/veto.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "paving/errors.hpp"
#include "paving/numerics/ops.hpp"

namespace paving {

ThresholdMode parse_threshold_mode(const std::string& name) {
  if (name == "high") return ThresholdMode::high;
  if (name == "low") return ThresholdMode::low;
  throw ConfigError("unknown veto threshold mode '" + name + "'");
}

std::string to_string(ThresholdMode mode) { return mode == ThresholdMode::high ? "high" : "low"; }

std::vector<double> VetoModel::normalize(const num::Array& z) const {
  require_config(z.size() == norm_mean.size(), "veto: feature dimension " + std::to_string(z.size()) +
                                                   " does not match model dimension " +
                                                   std::to_string(norm_mean.size()));
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = (z[i] - norm_mean[i]) / norm_std[i];
  return out;
}

double VetoModel::score(const num::Array& z) const {
  const auto x = normalize(z);
  double s = bias;
  for (std::size_t i = 0; i < x.size(); ++i) s += weights[i] * x[i];
  return s;
}

namespace {

constexpr double kStdFloor = 1e-8;

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Mean log-loss plus (l2/2)|w|^2; the bias is unregularized.
double objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& theta, double l2) {
  const Eigen::VectorXd s = X * theta;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) loss += softplus(s[i]) - y[i] * s[i];
  const Eigen::Index d = theta.size() - 1;
  return loss / static_cast<double>(s.size()) + 0.5 * l2 * theta.head(d).squaredNorm();
}

}  // namespace

VetoModel fit_veto(std::span<const num::Array> features, std::span<const Bucket> labels, const VetoFitOptions& opts,
                   VetoFitTrace* trace) {
  require_config(features.size() == labels.size(), "fit_veto: one label per feature required");
  require_config(!features.empty(), "fit_veto: no training examples");
  const std::size_t n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), Bucket::harmful_keep));
  require_config(n_pos > 0 && n_pos < labels.size(),
                 "fit_veto: needs at least one harmful-keep and one non-harmful example");
  require_config(opts.l2_weight >= 0.0 && opts.max_iter >= 1, "fit_veto: invalid options");

  const std::size_t n = features.size();
  const std::size_t d = features.front().size();
  VetoModel m;
  m.norm_mean.assign(d, 0.0);
  m.norm_std.assign(d, 0.0);
  for (const auto& z : features) {
    require_config(z.size() == d, "fit_veto: features have differing dimensions");
    for (std::size_t j = 0; j < d; ++j) m.norm_mean[j] += z[j];
  }
  for (double& v : m.norm_mean) v /= static_cast<double>(n);
  for (const auto& z : features)
    for (std::size_t j = 0; j < d; ++j) m.norm_std[j] += (z[j] - m.norm_mean[j]) * (z[j] - m.norm_mean[j]);
  for (double& v : m.norm_std) v = std::max(std::sqrt(v / static_cast<double>(n)), kStdFloor);

  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d + 1));
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = m.normalize(features[i]);
    for (std::size_t j = 0; j < d; ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x[j];
    X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = 1.0;
    y[static_cast<Eigen::Index>(i)] = labels[i] == Bucket::harmful_keep ? 1.0 : 0.0;
  }

  const auto D = static_cast<Eigen::Index>(d);
  const double inv_n = 1.0 / static_cast<double>(n);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(D + 1);
  double loss = objective(X, y, theta, opts.l2_weight);
  VetoFitTrace local;
  local.loss.push_back(loss);

  for (int it = 0; it < opts.max_iter; ++it) {
    const Eigen::VectorXd s = X * theta;
    Eigen::VectorXd p(s.size()), w(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      p[i] = num::sigmoid(s[i]);
      w[i] = p[i] * (1.0 - p[i]);
    }
    Eigen::VectorXd grad = inv_n * X.transpose() * (p - y);
    grad.head(D) += opts.l2_weight * theta.head(D);
    if (grad.lpNorm<Eigen::Infinity>() < opts.grad_tol) {
      local.converged = true;
      break;
    }
    Eigen::MatrixXd hess = inv_n * X.transpose() * w.asDiagonal() * X;
    hess.diagonal().head(D).array() += opts.l2_weight;
    hess(D, D) += 1e-10;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);

    double t = 1.0;
    Eigen::VectorXd next = theta - step;
    double next_loss = objective(X, y, next, opts.l2_weight);
    const double slope = grad.dot(step);
    while (next_loss > loss - 1e-4 * t * slope && t > 1e-12) {
      t *= 0.5;
      next = theta - t * step;
      next_loss = objective(X, y, next, opts.l2_weight);
    }
    if (!(next_loss <= loss)) {
      local.converged = true;
      break;
    }
    theta = next;
    loss = next_loss;
    local.loss.push_back(loss);
    local.iterations = it + 1;
  }

  m.weights.assign(theta.data(), theta.data() + D);
  m.bias = theta[D];
  if (trace != nullptr) *trace = local;

  std::vector<double> scores;
  scores.reserve(n);
  for (const auto& z : features) scores.push_back(m.score(z));
  m.threshold = select_threshold(scores, labels, m.mode);
  return m;
}

std::vector<double> threshold_candidates(std::span<const double> scores) {
  std::vector<double> s(scores.begin(), scores.end());
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  if (s.size() <= 1) return s;
  std::vector<double> out;
  out.reserve(s.size() + 1);
  out.push_back(-std::numeric_limits<double>::infinity());
  for (std::size_t i = 1; i < s.size(); ++i) out.push_back(0.5 * (s[i - 1] + s[i]));
  out.push_back(std::numeric_limits<double>::infinity());
  return out;
}

std::vector<ThresholdStats> threshold_sweep(std::span<const double> scores, std::span<const Bucket> labels) {
  require_config(scores.size() == labels.size(), "threshold sweep: one label per score required");
  std::vector<ThresholdStats> out;
  for (double tau : threshold_candidates(scores)) {
    ThresholdStats st{tau, 0, 0};
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool vetoed = scores[i] > tau;
      const bool positive = labels[i] == Bucket::harmful_keep;
      if (vetoed == positive) ++st.correct;
      if (vetoed && labels[i] == Bucket::edit) ++st.edit_false_vetoes;
    }
    out.push_back(st);
  }
  return out;
}

double select_threshold(std::span<const double> scores, std::span<const Bucket> labels, ThresholdMode mode) {
  const auto sweep = threshold_sweep(scores, labels);
  require(!sweep.empty(), "select_threshold: no scores");
  std::size_t best_correct = 0;
  for (const auto& st : sweep) best_correct = std::max(best_correct, st.correct);
  const ThresholdStats* best = nullptr;
  for (const auto& st : sweep) {
    if (st.correct != best_correct) continue;
    if (best == nullptr) {
      best = &st;
      continue;
    }
    const bool further = mode == ThresholdMode::high ? st.threshold > best->threshold : st.threshold < best->threshold;
    if (further || (st.threshold == best->threshold && st.edit_false_vetoes < best->edit_false_vetoes)) best = &st;
  }
  return best->threshold;
}

double select_threshold(const VetoModel& model, std::span<const num::Array> features, std::span<const Bucket> labels,
                        ThresholdMode mode) {
  std::vector<double> scores;
  scores.reserve(features.size());
  for (const auto& z : features) scores.push_back(model.score(z));
  return select_threshold(scores, labels, mode);
}

int veto_mask(const VetoModel& model, const num::Array& z) { return model.score(z) <= model.threshold ? 1 : 0; }

VetoCalibration evaluate_veto(const VetoModel& model, std::span<const num::Array> features,
                              std::span<const Bucket> labels) {
  require_config(features.size() == labels.size(), "evaluate_veto: one label per feature required");
  VetoCalibration c;
  c.n = features.size();
  std::size_t correct = 0, edits = 0, edit_vetoes = 0, benign = 0, benign_vetoes = 0, harmful = 0, caught = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const bool vetoed = veto_mask(model, features[i]) == 0;
    const bool positive = labels[i] == Bucket::harmful_keep;
    if (vetoed == positive) ++correct;
    switch (labels[i]) {
      case Bucket::edit: ++edits; edit_vetoes += vetoed; break;
      case Bucket::benign_keep: ++benign; benign_vetoes += vetoed; break;
      case Bucket::harmful_keep: ++harmful; caught += vetoed; break;
    }
  }
  auto rate = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  c.accuracy = rate(correct, c.n);
  c.edit_false_veto_rate = rate(edit_vetoes, edits);
  c.benign_false_veto_rate = rate(benign_vetoes, benign);
  c.harmful_recall = rate(caught, harmful);
  return c;
}

}  // namespace paving
