// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "paving/bucket.hpp"
#include "paving/numerics/array.hpp"

namespace paving {

enum class ThresholdMode { high, low };

ThresholdMode parse_threshold_mode(const std::string& name);
std::string to_string(ThresholdMode mode);

/// Linear harmful-keep scorer over z-scored boundary features.
/// m = 1 (edit allowed) iff score <= threshold.
struct VetoModel {
  std::vector<double> weights;
  double bias = 0.0;
  double threshold = 0.0;
  std::vector<double> norm_mean;
  std::vector<double> norm_std;  // clamped at 1e-8
  ThresholdMode mode = ThresholdMode::high;

  std::size_t dim() const { return weights.size(); }
  std::vector<double> normalize(const num::Array& z) const;
  double score(const num::Array& z) const;
};

struct VetoFitOptions {
  double l2_weight = 0.1;
  int max_iter = 100;
  double grad_tol = 1e-10;
};

struct VetoFitTrace {
  std::vector<double> loss;  // objective after each outer iteration, starting at the initial point
  int iterations = 0;
  bool converged = false;
};

/// Regularized logistic regression with harmful keeps as positives.
/// Deterministic Newton iterations with backtracking.
VetoModel fit_veto(std::span<const num::Array> features, std::span<const Bucket> labels, const VetoFitOptions& opts,
                   VetoFitTrace* trace = nullptr);

/// Candidate thresholds: midpoints between adjacent distinct sorted scores plus
/// -inf and +inf; a single distinct score is its own sole candidate.
std::vector<double> threshold_candidates(std::span<const double> scores);

struct ThresholdStats {
  double threshold = 0.0;
  std::size_t correct = 0;
  std::size_t edit_false_vetoes = 0;
};

std::vector<ThresholdStats> threshold_sweep(std::span<const double> scores, std::span<const Bucket> labels);

/// Max-accuracy threshold; mode high takes the largest, low the smallest, and
/// remaining ties go to fewer false vetoes on edits.
double select_threshold(const VetoModel& model, std::span<const num::Array> features, std::span<const Bucket> labels,
                        ThresholdMode mode);
double select_threshold(std::span<const double> scores, std::span<const Bucket> labels, ThresholdMode mode);

/// 1 lets the edit through, 0 blocks it.
int veto_mask(const VetoModel& model, const num::Array& z);

struct VetoCalibration {
  double accuracy = 0.0;
  double edit_false_veto_rate = 0.0;
  double benign_false_veto_rate = 0.0;
  double harmful_recall = 0.0;
  std::size_t n = 0;
};

VetoCalibration evaluate_veto(const VetoModel& model, std::span<const num::Array> features,
                              std::span<const Bucket> labels);

}  // namespace paving
