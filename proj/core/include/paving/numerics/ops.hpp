// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "paving/numerics/tape.hpp"

namespace paving::num {

/// Probability mass on an explicit token support (e.g. a top-k cache row).
struct SupportDistribution {
  std::vector<int> ids;
  std::vector<double> probs;
};

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
/// a * s where s is 1x1.
Var scale_by(Var a, Var s);
/// Adds a 1 x cols bias to every row.
Var add_row(Var a, Var bias);

Var gelu(Var a);  // tanh approximation
Var sigmoid(Var a);
Var relu(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
/// Row-wise softmax of a square score matrix over columns j <= i.
Var causal_softmax(Var scores);

Var embedding(Var table, std::span<const int> ids);
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var slice_rows(Var a, std::size_t start, std::size_t count);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);

Var sum(Var a);
Var mean(Var a);
Var sum_squares(Var a);
/// Cosine of the flattened arrays; 0 with zero gradient if either norm is 0.
Var cosine(Var a, Var b);

/// Mean over rows of -log softmax(logits)[row, target].
Var cross_entropy(Var logits, std::span<const int> targets);
/// Mean over rows of KL(target_row || softmax(logits_row)); target is constant.
Var kl_to_logits(const Array& target_probs, Var logits);
/// Mean over rows of KL(p || q^S) where q^S is softmax(logits) restricted to
/// the row's support and renormalized.
Var kl_on_support(std::span<const SupportDistribution> targets, Var logits);
/// softplus(a) - y*a for a 1x1 logit, i.e. BCE(sigmoid(a), y).
Var bce_with_logit(Var a, double target);

/// Rescales each row e_r so that |e_r| <= gmax * |h_r|.
Var clip_row_norms(Var e, Var h, double gmax);

// Plain (tape-free) helpers with the same numerics as the ops above.
double sigmoid(double x);
double gelu(double x);
double log_sum_exp(std::span<const double> x);
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);
/// KL(p || q) over a shared support. Terms with p_i == 0 contribute 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);

}  // namespace paving::num
