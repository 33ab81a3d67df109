// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "gradcheck.hpp"
#include "paving/errors.hpp"
#include "paving/numerics/adam.hpp"

namespace paving {
namespace {

using num::Array;
using num::Tape;
using num::Var;
using testing::grad_check;
using testing::project;
using testing::random_array;

constexpr int kPoints = 100;
constexpr double kTol = 1e-4;

struct OpCase {
  const char* name;
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  testing::LossBuilder build;
};

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  cases.push_back({"matmul", {{3, 4}, {4, 2}}, [](Tape& t, const std::vector<Var>& v) {
                     return project(t, num::matmul(v[0], v[1]), 1);
                   }});
  cases.push_back({"transpose", {{3, 2}}, [](Tape& t, const std::vector<Var>& v) {
                     return project(t, num::transpose(v[0]), 2);
                   }});
  cases.push_back({"add_sub_mul", {{2, 3}, {2, 3}}, [](Tape& t, const std::vector<Var>& v) {
                     return project(t, num::mul(num::add(v[0], v[1]), num::sub(v[0], v[1])), 3);
                   }});
  cases.push_back({"scale_by", {{2, 3}, {1, 1}}, [](Tape& t, const std::vector<Var>& v) {
                     return project(t, num::scale(num::scale_by(v[0], v[1]), 1.5), 4);
                   }});
  cases.push_back({"add_row", {{3, 4}, {1, 4}}, [](Tape& t, const std::vector<Var>& v) {
                     return project(t, num::add_row(v[0], v[1]), 5);
                   }});
  cases.push_back({"gelu", {{3, 4}}, [](Tape& t, const std::vector<Var>& v) { return project(t, num::gelu(v[0]), 6); }});
  cases.push_back(
      {"sigmoid", {{3, 4}}, [](Tape& t, const std::vector<Var>& v) { return project(t, num::sigmoid(v[0]), 7); }});
  cases.push_back({"relu", {{3, 4}}, [](Tape& t, const std::vector<Var>& v) { return project(t, num::relu(v[0]), 8); }});
  cases.push_back({"layer_norm", {{3, 5}, {1, 5}, {1, 5}}, [](Tape& t, const std::vector<Var>& v) {
                     return project(t, num::layer_norm(v[0], v[1], v[2]), 9);
                   }});
  cases.push_back({"softmax_rows", {{3, 5}}, [](Tape& t, const std::vector<Var>& v) {
                     return project(t, num::softmax_rows(v[0]), 10);
                   }});
  cases.push_back({"log_softmax_rows", {{3, 5}}, [](Tape& t, const std::vector<Var>& v) {
                     return project(t, num::log_softmax_rows(v[0]), 11);
                   }});
  cases.push_back({"causal_softmax", {{4, 4}}, [](Tape& t, const std::vector<Var>& v) {
                     return project(t, num::causal_softmax(v[0]), 12);
                   }});
  cases.push_back({"embedding", {{6, 3}}, [](Tape& t, const std::vector<Var>& v) {
                     const std::vector<int> ids{4, 0, 4, 2};
                     return project(t, num::embedding(v[0], ids), 13);
                   }});
  cases.push_back({"gather_slice_concat", {{4, 3}, {4, 2}}, [](Tape& t, const std::vector<Var>& v) {
                     const std::vector<std::size_t> rows{3, 1, 1};
                     Var g = num::gather_rows(v[0], rows);
                     Var c = num::concat_cols({num::slice_rows(v[0], 1, 2), num::slice_rows(v[1], 0, 2)});
                     Var r = num::concat_rows({num::slice_cols(c, 1, 3), g});
                     return project(t, r, 14);
                   }});
  cases.push_back({"mean_sum_squares", {{3, 3}}, [](Tape& t, const std::vector<Var>& v) {
                     return num::add(num::mean(num::mul(v[0], t.constant(Array(3, 3, 0.7)))), num::sum_squares(v[0]));
                   }});
  cases.push_back({"cosine", {{2, 3}, {2, 3}}, [](Tape&, const std::vector<Var>& v) { return num::cosine(v[0], v[1]); }});
  cases.push_back({"cross_entropy", {{3, 6}}, [](Tape&, const std::vector<Var>& v) {
                     const std::vector<int> targets{0, 5, 2};
                     return num::cross_entropy(v[0], targets);
                   }});
  cases.push_back({"kl_to_logits", {{2, 4}}, [](Tape&, const std::vector<Var>& v) {
                     Array p(2, 4, std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.7, 0.0, 0.2, 0.1});
                     return num::kl_to_logits(p, v[0]);
                   }});
  cases.push_back({"kl_on_support", {{2, 6}}, [](Tape&, const std::vector<Var>& v) {
                     std::vector<num::SupportDistribution> s{{{1, 4, 5}, {0.5, 0.3, 0.2}}, {{0, 2}, {0.9, 0.1}}};
                     return num::kl_on_support(s, v[0]);
                   }});
  cases.push_back({"bce_with_logit", {{1, 1}}, [](Tape&, const std::vector<Var>& v) {
                     return num::add(num::bce_with_logit(v[0], 1.0), num::scale(num::bce_with_logit(v[0], 0.0), 0.3));
                   }});
  cases.push_back({"clip_row_norms", {{3, 4}, {3, 4}}, [](Tape& t, const std::vector<Var>& v) {
                     return project(t, num::clip_row_norms(v[0], v[1], 0.8), 15);
                   }});
  return cases;
}

TEST(NumericsGradients, EveryOpMatchesCentralDifferencesAtRandomPoints) {
  for (const OpCase& c : op_cases()) {
    Rng rng(0xC0FFEE);
    double worst = 0.0;
    for (int point = 0; point < kPoints; ++point) {
      std::vector<Array> inputs;
      for (auto [r, k] : c.shapes) inputs.push_back(random_array(rng, r, k));
      worst = std::max(worst, grad_check(inputs, c.build).max_rel_error);
    }
    EXPECT_LE(worst, kTol) << c.name;
  }
}

TEST(NumericsGradients, SquareAtThreeIsSix) {
  Tape t;
  Var x = t.parameter(Array::scalar(3.0), "x");
  t.backward(num::mul(x, x));
  EXPECT_DOUBLE_EQ(t.gradient(x).item(), 6.0);
}

TEST(NumericsGradients, FrozenAndUnreachableLeavesGetZero) {
  Tape t;
  Var x = t.parameter(Array::scalar(2.0), "x");
  Var frozen = t.parameter(Array::scalar(5.0), "w", /*frozen=*/true);
  Var stopped = t.stop_gradient(x);
  Var unused = t.parameter(Array(2, 2, 1.0), "unused");
  t.backward(num::add(num::mul(x, frozen), num::mul(stopped, stopped)));
  EXPECT_EQ(t.gradient(frozen).item(), 0.0);
  EXPECT_DOUBLE_EQ(t.gradient(x).item(), 5.0);
  EXPECT_EQ(t.gradient(unused), Array(2, 2));
}

TEST(NumericsErrors, NonScalarLossIsAContractViolation) {
  Tape t;
  Var x = t.parameter(Array(2, 1, 1.0), "x");
  EXPECT_THROW(t.backward(x), ContractViolation);
}

TEST(NumericsErrors, ShapeMismatchIsAConfigurationError) {
  Tape t;
  Var a = t.constant(Array(2, 3));
  Var b = t.constant(Array(2, 2));
  EXPECT_THROW(num::add(a, b), ConfigError);
  EXPECT_THROW(num::matmul(a, a), ConfigError);
}

TEST(NumericsErrors, NonFiniteInputNamesTheNode) {
  Tape t;
  Array bad(1, 2, 0.0);
  bad[1] = std::numeric_limits<double>::quiet_NaN();
  try {
    t.constant(bad, "logits");
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("logits"), std::string::npos);
  }
}

TEST(NumericsValues, SoftmaxAndSigmoidSymmetry) {
  const std::vector<double> zero{0.0, 0.0};
  const auto p = num::softmax(zero);
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
  EXPECT_DOUBLE_EQ(num::sigmoid(0.0), 0.5);
}

TEST(NumericsProperties, SoftmaxIsADistribution) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> x(7);
    for (double& v : x) v = 30.0 * rng.normal();
    const auto p = num::softmax(x);
    double s = 0.0;
    for (double v : p) {
      EXPECT_GT(v, 0.0);
      EXPECT_LE(v, 1.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(NumericsProperties, KlIsNonNegativeAndZeroOnlyAtIdentity) {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> a(5), b(5);
    for (double& v : a) v = rng.normal();
    for (double& v : b) v = rng.normal();
    const auto p = num::softmax(a);
    const auto q = num::softmax(b);
    EXPECT_GE(num::kl_divergence(p, q), 0.0);
    EXPECT_GT(num::kl_divergence(p, q), 0.0);
    EXPECT_NEAR(num::kl_divergence(p, p), 0.0, 1e-12);
  }
}

TEST(NumericsProperties, ReplayIsBitIdentical) {
  Rng rng(5);
  const Array x = random_array(rng, 4, 6);
  const Array w = random_array(rng, 6, 6);
  auto run = [&] {
    Tape t;
    Var xv = t.parameter(x, "x");
    Var wv = t.parameter(w, "w");
    Var y = num::log_softmax_rows(num::gelu(num::matmul(xv, wv)));
    Var loss = project(t, y, 9);
    t.backward(loss);
    return std::make_pair(y.value(), t.gradient(wv));
  };
  EXPECT_EQ(run(), run());
}

TEST(NumericsAdam, FirstStepMovesByLearningRate) {
  Array p(1, 2, std::vector<double>{1.0, -1.0});
  num::Adam opt({&p}, {.lr = 0.1});
  const std::vector<Array> g{Array(1, 2, std::vector<double>{3.0, -0.5})};
  opt.step(g);
  EXPECT_NEAR(p[0], 0.9, 1e-6);
  EXPECT_NEAR(p[1], -0.9, 1e-6);
}

}  // namespace
}  // namespace paving
