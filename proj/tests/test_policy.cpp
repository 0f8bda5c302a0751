#include <cmath>

#include <gtest/gtest.h>

#include "cdistill/cdistill.hpp"
#include "oracles.hpp"

using namespace cdistill;

TEST(ActionProbs, ZeroLogitsAreUniform) {
  const SoftmaxPolicy p(1, 4, 0.0);
  for (double x : p.action_probs(0)) EXPECT_DOUBLE_EQ(x, 0.25);
}

TEST(ActionProbs, LogThreeVersusZero) {
  const SoftmaxPolicy p(Table(1, 2, std::vector<double>{std::log(3.0), 0.0}), 0.0);
  const auto pr = p.action_probs(0);
  EXPECT_NEAR(pr[0], 0.75, 1e-15);
  EXPECT_NEAR(pr[1], 0.25, 1e-15);
}

TEST(ActionProbs, FloorClampsSaturatedLogits) {
  const SoftmaxPolicy p(Table(1, 2, std::vector<double>{1000.0, 0.0}), 1e-8);
  const auto pr = p.action_probs(0);
  EXPECT_LT(pr[0], 1.0);
  EXPECT_GE(pr[1], 1e-8 / (1.0 + 2e-8));
}

TEST(ActionProbs, RowsSumToOneAndRespectFloor) {
  Rng rng(1);
  for (int k = 0; k < 20; ++k) {
    const SoftmaxPolicy p = SoftmaxPolicy::random(5, 4, 10.0, rng);
    for (StateId s = 0; s < 5; ++s) {
      const auto pr = p.action_probs(s);
      double sum = 0.0;
      for (double x : pr) {
        sum += x;
        EXPECT_GE(x, kDefaultFloor / (1.0 + 4 * kDefaultFloor) * (1 - 1e-12));
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(ActionProbs, FloorPreservesArgmax) {
  Rng rng(2);
  for (int k = 0; k < 50; ++k) {
    const SoftmaxPolicy p = SoftmaxPolicy::random(3, 5, 5.0, rng, 1e-3);
    for (StateId s = 0; s < 3; ++s) {
      std::vector<double> raw(5);
      p.softmax(s, raw);
      const auto fl = p.action_probs(s);
      EXPECT_EQ(std::max_element(raw.begin(), raw.end()) - raw.begin(),
                std::max_element(fl.begin(), fl.end()) - fl.begin());
    }
  }
}

TEST(GradLogProb, UniformBinaryTokenZero) {
  const Table g = SoftmaxPolicy(1, 2, 0.0).grad_log_prob(0, 0);
  EXPECT_DOUBLE_EQ(g(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(g(0, 1), -0.5);
  // the default floor shrinks the score by sigma / (sigma + floor)
  const Table gf = SoftmaxPolicy(1, 2).grad_log_prob(0, 0);
  EXPECT_NEAR(gf(0, 0), 0.5, 1e-7);
  EXPECT_NEAR(gf(0, 1), -0.5, 1e-7);
}

TEST(GradLogProb, OnlyTheStateRowMovesAndItSumsToZero) {
  Rng rng(3);
  const SoftmaxPolicy p = SoftmaxPolicy::random(4, 3, 2.0, rng);
  const Table g = p.grad_log_prob(2, 1);
  for (StateId s = 0; s < 4; ++s) {
    double sum = 0.0;
    for (TokenId a = 0; a < 3; ++a) {
      if (s != 2) {
        EXPECT_EQ(g(s, a), 0.0);
      }
      sum += g(s, a);
    }
    EXPECT_NEAR(sum, 0.0, 1e-14);
  }
}

TEST(GradLogProb, MatchesFiniteDifferences) {
  Rng rng(4);
  for (int k = 0; k < 20; ++k) {
    const double floor = k % 2 ? 1e-8 : 1e-3;
    const SoftmaxPolicy p = SoftmaxPolicy::random(3, 4, 1.5, rng, floor);
    const StateId s = rng.below(3);
    const TokenId a = rng.below(4);
    const Table fd = oracle::central_difference(
        p.logits(), [&](const Table& th) { return std::log(oracle::probs(th, s, floor)[a]); });
    EXPECT_LE(oracle::rel_error(p.grad_log_prob(s, a), fd), 1e-6);
  }
}

TEST(GradLogProb, ScoreHasZeroMean) {
  Rng rng(5);
  for (int k = 0; k < 20; ++k) {
    const SoftmaxPolicy p = SoftmaxPolicy::random(2, 5, 3.0, rng);
    for (StateId s = 0; s < 2; ++s) {
      const auto pr = p.action_probs(s);
      Table acc(2, 5);
      for (TokenId a = 0; a < 5; ++a) p.accumulate_grad_log_prob(s, a, pr[a], acc);
      EXPECT_LE(oracle::max_abs(acc), 1e-10);
    }
  }
}

TEST(TeacherPolicy, RejectsRowsOffTheSimplex) {
  EXPECT_THROW(TeacherPolicy::from_probs(Table(1, 2, std::vector<double>{0.5, 0.6})), InputError);
  EXPECT_THROW(TeacherPolicy::from_probs(Table(1, 2, std::vector<double>{-0.1, 1.1})), InputError);
}

TEST(TeacherPolicy, FlooredRowsStayOnTheSimplex) {
  const TeacherPolicy t = TeacherPolicy::from_probs(Table(1, 3, std::vector<double>{1.0, 0.0, 0.0}));
  double sum = 0.0;
  for (double x : t.action_probs(0)) {
    sum += x;
    EXPECT_GE(x, kDefaultFloor / (1 + 3 * kDefaultFloor) * (1 - 1e-12));
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(SoftmaxPolicy, RejectsNegativeFloor) { EXPECT_THROW(SoftmaxPolicy(1, 2, -1.0), InputError); }
