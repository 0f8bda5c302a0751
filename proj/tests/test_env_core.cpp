#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "cdistill/cdistill.hpp"
#include "oracles.hpp"

using namespace cdistill;

TEST(Step, AdvanceOnChainPaysNothing) {
  const Task t = chain_task(3);
  EXPECT_EQ(step(t.mdp, 0, t.mdp.token("advance")), (StepResult{1, 0.0, false}));
}

TEST(Step, GoalFromLastChainStatePaysOne) {
  const Task t = chain_task(3);
  const StepResult r = step(t.mdp, 2, t.mdp.token("goal"));
  EXPECT_EQ(r.next_state, 3u);
  EXPECT_EQ(r.task_reward, 1.0);
  EXPECT_TRUE(r.terminal);
}

TEST(Step, WrongFromLastChainStateEndsInSink) {
  const Task t = chain_task(3);
  const StepResult r = step(t.mdp, 2, t.mdp.token("wrong"));
  EXPECT_EQ(r.next_state, 4u);
  EXPECT_EQ(r.task_reward, 0.0);
  EXPECT_TRUE(r.terminal);
}

TEST(Step, RejectsOutOfRangeStateOrToken) {
  const Task t = chain_task(3);
  EXPECT_THROW(step(t.mdp, 99, 0), InputError);
  EXPECT_THROW(step(t.mdp, 0, 7), InputError);
}

TEST(TokenMdp, ValidateCatchesBrokenTables) {
  TokenMdp m = chain_task(3).mdp;
  m.transition.pop_back();
  EXPECT_THROW(m.validate(), InputError);
  m = chain_task(3).mdp;
  m.task_reward[0] = 0.5;
  EXPECT_THROW(m.validate(), InputError);
  m = chain_task(3).mdp;
  m.initial_states = {3};
  EXPECT_THROW(m.validate(), InputError);
}

TEST(Rollout, StudentEqualToTeacherCostsNothing) {
  const Task t = chain_task(3);
  const SoftmaxPolicy student = t.teacher.as_student();
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const Trajectory tr = rollout(t.mdp, student, t.teacher, ConstrainedRewardSpec{}, rng);
    for (const Step& s : tr.steps) EXPECT_NEAR(s.cost, 0.0, 1e-12);
  }
}

TEST(Rollout, DeterministicStudentWalksTheChainWithPerStateKl) {
  const Task t = chain_task(3);
  Table logits(t.mdp.num_states, 3, 0.0);
  for (StateId s = 0; s < 2; ++s) logits(s, 0) = 40.0;
  logits(2, 1) = 40.0;
  const SoftmaxPolicy student(logits, 0.0);
  Rng rng(3);
  const Trajectory tr = rollout(t.mdp, student, t.teacher, ConstrainedRewardSpec{}, rng);
  ASSERT_EQ(tr.length(), 3u);
  EXPECT_TRUE(tr.terminated);
  EXPECT_EQ(tr.task_return(), 1.0);
  for (const Step& s : tr.steps) {
    const double expect = oracle::kl(oracle::probs(logits, s.state, 0.0), oracle::row(t.teacher.probs(), s.state));
    EXPECT_NEAR(s.cost, expect, 1e-12);
  }
}

TEST(Rollout, HorizonTruncatesWithZeroReward) {
  const Task t = chain_task(5, 2);
  Table logits(t.mdp.num_states, 3, 0.0);
  for (StateId s = 0; s < 5; ++s) logits(s, 0) = 40.0;
  const SoftmaxPolicy student(logits, 0.0);
  Rng rng(4);
  const Trajectory tr = rollout(t.mdp, student, t.teacher, ConstrainedRewardSpec{}, rng);
  EXPECT_TRUE(tr.truncated);
  EXPECT_EQ(tr.length(), 2u);
  EXPECT_EQ(tr.task_return(), 0.0);
}

TEST(Rollout, SameStreamSameTrajectory) {
  const Task t = tension_task();
  Rng init(5);
  const SoftmaxPolicy student = SoftmaxPolicy::random(t.mdp.num_states, 4, 1.0, init);
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng a(s), b(s);
    EXPECT_EQ(rollout(t.mdp, student, t.teacher, {}, a), rollout(t.mdp, student, t.teacher, {}, b));
  }
}

TEST(SampleGroups, IndependentOfThreadCount) {
  const Task t = tension_task();
  Rng init(6);
  const SoftmaxPolicy student = SoftmaxPolicy::random(t.mdp.num_states, 4, 1.0, init);
  const StateCosts costs = StateCosts::compute(student, t.teacher, {});
  const auto one = sample_groups(t.mdp, costs, 8, 8, 77, 3, 1);
  const auto four = sample_groups(t.mdp, costs, 8, 8, 77, 3, 4);
  EXPECT_EQ(one, four);
  // group g starts from initial state (first_group + g) mod k
  for (std::size_t g = 0; g < 8; ++g)
    for (const auto& tr : one[g]) EXPECT_EQ(tr.start, t.mdp.initial_states[(3 + g) % t.mdp.initial_states.size()]);
}

TEST(Enumerate, BinaryHorizonThreeHasAtMostEightLeavesSummingToOne) {
  TokenMdp m;
  m.num_states = 2;
  m.vocab_size = 2;
  m.horizon = 3;
  m.transition = {0, 1, 1, 1};
  m.terminal = {false, true};
  m.task_reward = {0.0, 1.0};
  m.initial_states = {0};
  m.validate();
  Rng rng(7);
  const SoftmaxPolicy student = SoftmaxPolicy::random(2, 2, 1.0, rng);
  const auto all = enumerate_trajectories(m, student, TeacherPolicy::uniform(2, 2), {});
  EXPECT_LE(all.size(), 8u);
  double total = 0.0;
  for (const auto& w : all) total += w.probability;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Enumerate, UniformOneStepGivesTwoHalves) {
  const Task t = trivial_task();
  const auto all = enumerate_trajectories(t.mdp, SoftmaxPolicy(3, 2, 0.0), t.teacher, {});
  ASSERT_EQ(all.size(), 2u);
  EXPECT_DOUBLE_EQ(all[0].probability, 0.5);
  EXPECT_DOUBLE_EQ(all[1].probability, 0.5);
}

TEST(Enumerate, CapExceededThrowsSizeError) {
  const Task t = tension_task();
  EXPECT_THROW(enumerate_trajectories(t.mdp, SoftmaxPolicy(t.mdp.num_states, 4), t.teacher, {}, 10), SizeError);
  EXPECT_GT(count_leaves(t.mdp, 10), 10u);
}

TEST(Enumerate, ProbabilitiesSumToOneOnRandomInstances) {
  for (std::uint64_t i = 0; i < 30; ++i) {
    Rng rng(100 + i);
    const Task t = random_task(rng);
    const SoftmaxPolicy student = SoftmaxPolicy::random(t.mdp.num_states, t.mdp.vocab_size, 2.0, rng);
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& w : enumerate_trajectories(t.mdp, student, t.teacher, {})) {
      total += w.probability;
      ++n;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_EQ(n, count_leaves(t.mdp));
  }
}

// Monte Carlo against enumeration: 10^6 rollouts, within 3 standard errors.
TEST(Enumerate, ExpectedReturnMatchesRolloutMean) {
  const Task t = chain_task(3);
  Rng init(8);
  const SoftmaxPolicy student = SoftmaxPolicy::random(t.mdp.num_states, 3, 1.0, init);
  const StateCosts costs = StateCosts::compute(student, t.teacher, {});
  double exact = 0.0;
  for_each_trajectory(t.mdp, costs, [&](const Trajectory& tr, double p) { exact += p * tr.task_return(); });
  const std::size_t N = 1'000'000;
  double sum = 0.0, sq = 0.0;
  Rng rng(9);
  for (std::size_t i = 0; i < N; ++i) {
    const double r = rollout_from(t.mdp, costs, 0, rng).task_return();
    sum += r;
    sq += r * r;
  }
  const double mean = sum / N;
  const double se = std::sqrt((sq / N - mean * mean) / N);
  EXPECT_LE(std::abs(mean - exact), 3.0 * se);
}

TEST(Enumerate, EveryBuiltinTaskAgreesWithSampling) {
  for (const char* name : {"chain", "trivial", "tension"}) {
    const Task t = builtin_task(name);
    Rng init(10);
    const SoftmaxPolicy student = SoftmaxPolicy::random(t.mdp.num_states, t.mdp.vocab_size, 0.5, init);
    const StateCosts costs = StateCosts::compute(student, t.teacher, {});
    double exact = 0.0;
    for_each_trajectory(t.mdp, costs, [&](const Trajectory& tr, double p) { exact += p * tr.task_return(); });
    const std::size_t N = 200'000;
    double sum = 0.0, sq = 0.0;
    Rng rng(11);
    for (std::size_t i = 0; i < N; ++i) {
      const StateId s0 = t.mdp.initial_states[i % t.mdp.initial_states.size()];
      const double r = rollout_from(t.mdp, costs, s0, rng).task_return();
      sum += r;
      sq += r * r;
    }
    const double mean = sum / N;
    const double se = std::sqrt(std::max(sq / N - mean * mean, 1e-12) / N);
    EXPECT_LE(std::abs(mean - exact), 4.0 * se) << name;
  }
}

TEST(Rollout, RewardsBinaryAndCostsNonnegative) {
  const Task t = tension_task();
  Rng init(12);
  const SoftmaxPolicy student = SoftmaxPolicy::random(t.mdp.num_states, 4, 2.0, init);
  Rng rng(13);
  for (int i = 0; i < 500; ++i) {
    const Trajectory tr = rollout(t.mdp, student, t.teacher, {}, rng);
    for (std::size_t k = 0; k < tr.steps.size(); ++k) {
      const Step& s = tr.steps[k];
      EXPECT_GE(s.cost, 0.0);
      EXPECT_TRUE(s.task_reward == 0.0 || s.task_reward == 1.0);
      if (k + 1 < tr.steps.size()) {
        EXPECT_EQ(s.task_reward, 0.0);
      }
    }
    EXPECT_LE(tr.length(), t.mdp.horizon);
  }
}
