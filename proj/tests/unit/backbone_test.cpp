// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fixtures.hpp"
#include "paving/errors.hpp"

namespace paving {
namespace {

using num::Array;
using testing::ConstantHook;
using testing::tiny_backbone_config;

const Tokens kPrompt{1, 5, 9, 3};
const Tokens kCont{7, 2, 11};

TEST(Backbone, ConfigRejectsIndivisibleWidth) {
  BackboneConfig c = tiny_backbone_config();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Backbone, ForwardShapesAndDeterminism) {
  const Backbone bb(tiny_backbone_config());
  const ResidualTrace a = bb.forward(kPrompt);
  const ResidualTrace b = bb.forward(kPrompt);
  ASSERT_EQ(a.states.size(), 5u);
  for (const Array& s : a.states) {
    EXPECT_EQ(s.rows(), kPrompt.size());
    EXPECT_EQ(s.cols(), 16u);
    EXPECT_TRUE(s.all_finite());
  }
  EXPECT_EQ(a.step_logits.cols(), 16u);
  EXPECT_EQ(a.states, b.states);
  EXPECT_EQ(a.step_logits, b.step_logits);
}

TEST(Backbone, ZeroHookIsBitIdenticalToNoHook) {
  const Backbone bb(tiny_backbone_config());
  ConstantHook zero(2, Array(1, 16));
  const ResidualTrace base = bb.forward(kPrompt);
  const ResidualTrace hooked = bb.forward(kPrompt, &zero);
  EXPECT_EQ(base.states, hooked.states);
  EXPECT_EQ(base.step_logits, hooked.step_logits);
}

TEST(Backbone, HookDeltaAppearsAtItsLayerOnly) {
  const Backbone bb(tiny_backbone_config());
  Array delta(1, 16);
  for (std::size_t i = 0; i < 16; ++i) delta[i] = 0.01 * static_cast<double>(i) - 0.05;
  ConstantHook hook(2, delta);
  const ResidualTrace base = bb.forward(kPrompt);
  const ResidualTrace edited = bb.forward(kPrompt, &hook);
  EXPECT_EQ(base.states[0], edited.states[0]);
  EXPECT_EQ(base.states[1], edited.states[1]);
  for (std::size_t t = 0; t < kPrompt.size(); ++t)
    for (std::size_t c = 0; c < 16; ++c) EXPECT_NEAR(edited.states[2](t, c) - base.states[2](t, c), delta[c], 1e-12);
  EXPECT_NE(base.states[3], edited.states[3]);
}

TEST(Backbone, NonFiniteHookNamesTheLayer) {
  const Backbone bb(tiny_backbone_config());
  Array bad(1, 16);
  bad[3] = std::numeric_limits<double>::infinity();
  ConstantHook hook(3, bad);
  try {
    bb.forward(kPrompt, &hook);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 3"), std::string::npos) << e.what();
  }
}

TEST(Backbone, CausalPrefixStatesIgnoreLaterTokens) {
  const Backbone bb(tiny_backbone_config());
  Tokens longer = kPrompt;
  longer.push_back(12);
  const ResidualTrace a = bb.forward(kPrompt);
  const ResidualTrace b = bb.forward(longer);
  for (std::size_t l = 0; l < a.states.size(); ++l)
    for (std::size_t t = 0; t < kPrompt.size(); ++t)
      for (std::size_t c = 0; c < 16; ++c) EXPECT_NEAR(a.states[l](t, c), b.states[l](t, c), 1e-12);
}

TEST(Backbone, TeacherForcedStepsMatchForwardOnConcatenation) {
  const Backbone bb(tiny_backbone_config());
  const ResidualTrace tf = bb.teacher_forced_trace(kPrompt, kCont, nullptr, 8);
  Tokens all = kPrompt;
  all.insert(all.end(), kCont.begin(), kCont.end());
  const ResidualTrace full = bb.forward(all);
  ASSERT_EQ(tf.steps(), kCont.size());
  for (std::size_t t = 0; t < kCont.size(); ++t) {
    const auto row = full.step_logits.row(kPrompt.size() - 1 + t);
    const auto p = num::softmax(row);
    const auto q = tf.step_probs(t);
    for (std::size_t v = 0; v < p.size(); ++v) EXPECT_EQ(p[v], q[v]);
  }
}

TEST(Backbone, TeacherForcedEmptyContinuationAndHorizon) {
  const Backbone bb(tiny_backbone_config());
  const ResidualTrace tf = bb.teacher_forced_trace(kPrompt, Tokens{}, nullptr, 8);
  EXPECT_EQ(tf.steps(), 0u);
  EXPECT_EQ(tf.states.front().rows(), kPrompt.size());
  EXPECT_THROW(bb.teacher_forced_trace(kPrompt, kCont, nullptr, 2), ConfigError);
}

TEST(Backbone, TopKFullVocabEqualsBaseDistribution) {
  const Backbone bb(tiny_backbone_config());
  const TopKReference ref = bb.cache_topk_reference(kPrompt, kCont, 16);
  const ResidualTrace tf = bb.teacher_forced_trace(kPrompt, kCont, nullptr, kCont.size());
  ASSERT_EQ(ref.steps.size(), kCont.size());
  for (std::size_t t = 0; t < kCont.size(); ++t) {
    const auto p = tf.step_probs(t);
    for (std::size_t i = 0; i < ref.steps[t].ids.size(); ++i)
      EXPECT_NEAR(ref.steps[t].probs[i], p[static_cast<std::size_t>(ref.steps[t].ids[i])], 1e-15);
  }
}

TEST(Backbone, TopKSupportsAreUniqueAndNormalized) {
  const Backbone bb(tiny_backbone_config());
  const TopKReference ref = bb.cache_topk_reference(kPrompt, kCont, 5);
  for (const auto& row : ref.steps) {
    ASSERT_EQ(row.ids.size(), 5u);
    double s = 0.0;
    for (double p : row.probs) s += p;
    EXPECT_NEAR(s, 1.0, 1e-9);
    std::vector<int> ids = row.ids;
    std::sort(ids.begin(), ids.end());
    EXPECT_EQ(std::adjacent_find(ids.begin(), ids.end()), ids.end());
    for (std::size_t i = 1; i < row.probs.size(); ++i) EXPECT_GE(row.probs[i - 1], row.probs[i]);
  }
}

TEST(Backbone, TieRulesPreferLowerIds) {
  const std::vector<double> flat(6, 0.25);
  EXPECT_EQ(top_k_ids(flat, 2), (std::vector<int>{0, 1}));
  EXPECT_EQ(argmax_token(flat), 0);
  const std::vector<double> two_peaks{0.1, 0.9, 0.3, 0.9};
  EXPECT_EQ(argmax_token(two_peaks), 1);
}

TEST(Backbone, GreedyDecodeSingleStepIsArgmax) {
  const Backbone bb(tiny_backbone_config());
  const ResidualTrace base = bb.forward(kPrompt);
  const int expected = argmax_token(base.step_logits.row(kPrompt.size() - 1));
  const Tokens out = bb.greedy_decode(kPrompt, 1, nullptr, /*eos=*/-1);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], expected);
}

TEST(Backbone, GreedyDecodeStopsAtEosAndSequenceLimit) {
  const Backbone bb(tiny_backbone_config());
  const Tokens free_run = bb.greedy_decode(kPrompt, 30, nullptr, -1);
  EXPECT_EQ(free_run.size(), 16u - kPrompt.size());
  const Tokens stopped = bb.greedy_decode(kPrompt, 30, nullptr, free_run[1]);
  EXPECT_LE(stopped.size(), 1u);
}

TEST(Backbone, ChecksumTracksParameters) {
  const Backbone a(tiny_backbone_config());
  const Backbone b(tiny_backbone_config());
  EXPECT_EQ(a.checksum(), b.checksum());
  BackboneParams p = a.params();
  p.w_out[0] += 1e-9;
  const Backbone c(tiny_backbone_config(), p);
  EXPECT_NE(a.checksum(), c.checksum());
}

TEST(Backbone, NamedRoundTrip) {
  const Backbone a(tiny_backbone_config());
  std::map<std::string, Array> arrays;
  for (const auto& [name, arr] : a.params().named()) arrays[name] = *arr;
  const Backbone b(tiny_backbone_config(), BackboneParams::from_named(tiny_backbone_config(), arrays));
  EXPECT_EQ(a.checksum(), b.checksum());
  arrays.erase("w_out");
  EXPECT_THROW(BackboneParams::from_named(tiny_backbone_config(), arrays), ConfigError);
}

}  // namespace
}  // namespace paving
