// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "gradcheck.hpp"
#include "paving/errors.hpp"
#include "paving/veto.hpp"

namespace paving {
namespace {

using num::Array;

struct Cloud {
  std::vector<Array> z;
  std::vector<Bucket> labels;
};

Cloud make_cloud(double separation, std::uint64_t seed, std::size_t per_bucket = 40) {
  Rng rng(seed);
  Cloud c;
  const Bucket order[3] = {Bucket::edit, Bucket::benign_keep, Bucket::harmful_keep};
  for (Bucket b : order) {
    for (std::size_t i = 0; i < per_bucket; ++i) {
      Array z(1, 4);
      for (std::size_t j = 0; j < 4; ++j) z[j] = rng.normal() + 3.0 * j;
      if (b == Bucket::harmful_keep) z[0] += separation;
      c.z.push_back(z);
      c.labels.push_back(b);
    }
  }
  return c;
}

double round1(double pct) { return std::round(pct * 10.0) / 10.0; }

TEST(Veto, SeparableCloudsAreFitPerfectly) {
  const Cloud c = make_cloud(20.0, 1);
  const VetoModel m = fit_veto(c.z, c.labels, {});
  const VetoCalibration cal = evaluate_veto(m, c.z, c.labels);
  EXPECT_EQ(cal.accuracy, 1.0);
  EXPECT_EQ(cal.edit_false_veto_rate, 0.0);
  EXPECT_EQ(cal.harmful_recall, 1.0);
}

TEST(Veto, OverlappingCloudsDecreaseLossEveryIteration) {
  const Cloud c = make_cloud(1.0, 2);
  VetoFitTrace trace;
  const VetoModel m = fit_veto(c.z, c.labels, {.l2_weight = 0.1}, &trace);
  ASSERT_GE(trace.loss.size(), 2u);
  for (std::size_t i = 1; i < trace.loss.size(); ++i) EXPECT_LE(trace.loss[i], trace.loss[i - 1]);
  EXPECT_LT(evaluate_veto(m, c.z, c.labels).accuracy, 1.0);
  EXPECT_LE(trace.iterations, 100);
}

TEST(Veto, FitIsDeterministic) {
  const Cloud c = make_cloud(1.5, 3);
  const VetoModel a = fit_veto(c.z, c.labels, {});
  const VetoModel b = fit_veto(c.z, c.labels, {});
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.bias, b.bias);
  EXPECT_EQ(a.threshold, b.threshold);
  EXPECT_EQ(a.norm_mean, b.norm_mean);
}

TEST(Veto, SingleClassIsAConfigurationError) {
  const std::vector<Array> z{Array(1, 2, 1.0), Array(1, 2, 2.0)};
  const std::vector<Bucket> labels{Bucket::edit, Bucket::benign_keep};
  EXPECT_THROW(fit_veto(z, labels, {}), ConfigError);
}

TEST(Veto, ConstantFeatureStdIsClamped) {
  std::vector<Array> z;
  std::vector<Bucket> labels;
  for (int i = 0; i < 6; ++i) {
    z.push_back(Array(1, 2, std::vector<double>{5.0, static_cast<double>(i)}));
    labels.push_back(i < 3 ? Bucket::edit : Bucket::harmful_keep);
  }
  const VetoModel m = fit_veto(z, labels, {});
  EXPECT_EQ(m.norm_std[0], 1e-8);
  EXPECT_TRUE(std::isfinite(m.score(z[0])));
}

TEST(Veto, IdenticalScoresGiveSingleCandidate) {
  const std::vector<double> scores(5, 0.3);
  const std::vector<Bucket> labels{Bucket::edit, Bucket::harmful_keep, Bucket::edit, Bucket::benign_keep,
                                   Bucket::harmful_keep};
  EXPECT_EQ(threshold_candidates(scores), std::vector<double>{0.3});
  EXPECT_EQ(select_threshold(scores, labels, ThresholdMode::high), 0.3);
  EXPECT_EQ(select_threshold(scores, labels, ThresholdMode::low), 0.3);
}

TEST(Veto, CandidatesIncludeSentinels) {
  const std::vector<double> scores{2.0, -1.0, 2.0, 0.0};
  const auto c = threshold_candidates(scores);
  ASSERT_EQ(c.size(), 4u);
  EXPECT_EQ(c.front(), -std::numeric_limits<double>::infinity());
  EXPECT_EQ(c[1], -0.5);
  EXPECT_EQ(c[2], 1.0);
  EXPECT_EQ(c.back(), std::numeric_limits<double>::infinity());
}

TEST(Veto, EqualAccuracyTieHighPicksLargest) {
  // Midpoints 0.4 and 1.2 both classify 3 of 4 correctly.
  const std::vector<double> scores{0.2, 0.6, 1.0, 1.4};
  const std::vector<Bucket> labels{Bucket::benign_keep, Bucket::harmful_keep, Bucket::benign_keep,
                                   Bucket::harmful_keep};
  EXPECT_DOUBLE_EQ(select_threshold(scores, labels, ThresholdMode::high), 1.2);
  EXPECT_DOUBLE_EQ(select_threshold(scores, labels, ThresholdMode::low), 0.4);
}

TEST(Veto, HighModeIsEditConservativeOverRandomTieSets) {
  Rng rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 4 + rng.below(12);
    std::vector<double> scores;
    std::vector<Bucket> labels;
    for (std::size_t i = 0; i < n; ++i) {
      scores.push_back(static_cast<double>(rng.below(6)));
      labels.push_back(static_cast<Bucket>(rng.below(3)));
    }
    if (std::count(labels.begin(), labels.end(), Bucket::harmful_keep) == 0) labels[0] = Bucket::harmful_keep;
    const auto sweep = threshold_sweep(scores, labels);
    std::size_t best = 0;
    for (const auto& s : sweep) best = std::max(best, s.correct);
    const double tau = select_threshold(scores, labels, ThresholdMode::high);
    const ThresholdStats* chosen = nullptr;
    for (const auto& s : sweep)
      if (s.threshold == tau) chosen = &s;
    ASSERT_NE(chosen, nullptr);
    EXPECT_EQ(chosen->correct, best);
    for (const auto& s : sweep) {
      if (s.correct != best) continue;
      EXPECT_LE(s.threshold, tau);
      EXPECT_LE(chosen->edit_false_vetoes, s.edit_false_vetoes);
    }
  }
}

TEST(Veto, HighThresholdAvoidsEditFalseVetoesUnlikeLowOperatingPoint) {
  // 38 examples per bucket: the operating-point rates 0.0 / 86.8 versus 13.2 / 92.1.
  std::vector<double> scores;
  std::vector<Bucket> labels;
  auto add = [&](Bucket b, double s, int count) {
    for (int i = 0; i < count; ++i) {
      scores.push_back(s);
      labels.push_back(b);
    }
  };
  add(Bucket::benign_keep, -10.0, 38);
  add(Bucket::harmful_keep, 5.0, 33);
  add(Bucket::harmful_keep, 1.0, 2);
  add(Bucket::harmful_keep, -10.0, 3);
  add(Bucket::edit, 1.5, 5);
  add(Bucket::edit, -5.0, 33);

  auto rates = [&](double tau) {
    std::size_t edit_fp = 0, caught = 0, correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool vetoed = scores[i] > tau;
      edit_fp += vetoed && labels[i] == Bucket::edit;
      caught += vetoed && labels[i] == Bucket::harmful_keep;
      correct += vetoed == (labels[i] == Bucket::harmful_keep);
    }
    return std::tuple{round1(100.0 * edit_fp / 38.0), round1(100.0 * caught / 38.0), correct};
  };
  const double high = select_threshold(scores, labels, ThresholdMode::high);
  const auto [fp_high, recall_high, acc_high] = rates(high);
  const auto [fp_low, recall_low, acc_low] = rates(-2.0);
  EXPECT_EQ(fp_high, 0.0);
  EXPECT_EQ(recall_high, 86.8);
  EXPECT_EQ(fp_low, 13.2);
  EXPECT_EQ(recall_low, 92.1);
  EXPECT_GE(acc_high, acc_low);
}

TEST(Veto, MaskIsInclusiveAtThreshold) {
  VetoModel m;
  m.weights = {2.0};
  m.bias = 0.5;
  m.norm_mean = {1.0};
  m.norm_std = {2.0};
  const Array z(1, 1, 3.0);  // normalized 1.0 -> score 2.5
  m.threshold = 2.5;
  EXPECT_EQ(veto_mask(m, z), 1);
  m.threshold = std::nextafter(2.5, 0.0);
  EXPECT_EQ(veto_mask(m, z), 0);
  EXPECT_THROW(veto_mask(m, Array(1, 2)), ConfigError);
}

TEST(Veto, ModeNamesRoundTrip) {
  EXPECT_EQ(parse_threshold_mode(to_string(ThresholdMode::low)), ThresholdMode::low);
  EXPECT_THROW(parse_threshold_mode("middle"), ConfigError);
  EXPECT_EQ(parse_bucket("harmful"), Bucket::harmful_keep);
  EXPECT_EQ(to_string(Bucket::benign_keep), "benign_keep");
}

}  // namespace
}  // namespace paving
