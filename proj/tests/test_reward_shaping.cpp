#include <cmath>

#include <gtest/gtest.h>

#include "cdistill/cdistill.hpp"

using namespace cdistill;

namespace {

Trajectory make(std::vector<double> costs, std::vector<double> phis, double final_reward) {
  Trajectory t;
  for (std::size_t i = 0; i < costs.size(); ++i) t.steps.push_back({i, 0, 0.0, costs[i], phis[i]});
  t.steps.back().task_reward = final_reward;
  t.terminated = true;
  return t;
}

ConstrainedRewardSpec with_mode(Method m) {
  ConstrainedRewardSpec s;
  s.mode = m;
  return s;
}

}  // namespace

TEST(RewardSpec, DefaultsMatchTheExperimentalSetup) {
  const ConstrainedRewardSpec s;
  EXPECT_EQ(s.d, 0.35);
  EXPECT_EQ(s.n, 20.0);
  EXPECT_EQ(s.epsilon, 1e-3);
  EXPECT_EQ(s.gamma, 1.0);
  EXPECT_EQ(s.cost_kind, DivergenceKind::reverse_kl);
  EXPECT_EQ(s.phi_kind, DivergenceKind::reverse_kl);
}

TEST(RewardSpec, ValidateRejectsBadValues) {
  ConstrainedRewardSpec s;
  s.d = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.n = -1.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = with_mode(Method::lagrangian);
  s.lambda = -0.1;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(FeasibleAt, RemainingBudgetArithmetic) {
  BudgetLedger a(0.35);
  a.charge(0.1);
  a.charge(0.2);
  EXPECT_NEAR(a.remaining(), 0.05, 1e-15);
  EXPECT_TRUE(feasible_at(a));
  BudgetLedger b(0.35);
  b.charge(0.2);
  b.charge(0.2);
  EXPECT_NEAR(b.remaining(), -0.05, 1e-15);
  EXPECT_FALSE(feasible_at(b));
  EXPECT_TRUE(feasible_at(BudgetLedger(1e-9)));
}

TEST(UnaugReward, FeasiblePathPaysTheTaskReward) {
  const auto r = unaug_reward(make({0, 0, 0}, {0, 0, 0}, 1.0), {});
  EXPECT_EQ(r, (std::vector<double>{0, 0, 1}));
}

TEST(UnaugReward, ViolationPaysNPlusPhi) {
  // prefix through step 1 is 0.4 > 0.35, so step 2 pays -(20 + 0.4)
  const auto r = unaug_reward(make({0.2, 0.2, 0.4}, {0.2, 0.2, 0.4}, 1.0), {});
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 0.0);
  EXPECT_DOUBLE_EQ(r[2], -20.4);
}

TEST(UnaugReward, CurrentStepCostIsNotCharged) {
  // the single step's own cost never counts against it
  const auto r = unaug_reward(make({5.0}, {5.0}, 1.0), {});
  EXPECT_EQ(r[0], 1.0);
}

TEST(UnaugReward, InfeasibilityAbsorbs) {
  const auto r = unaug_reward(make({0.5, 0.0, 0.0, 0.0}, {0.5, 0.1, 0.2, 0.3}, 1.0), {});
  EXPECT_EQ(r[0], 0.0);
  EXPECT_DOUBLE_EQ(r[1], -20.1);
  EXPECT_DOUBLE_EQ(r[2], -20.2);
  EXPECT_DOUBLE_EQ(r[3], -20.3);
}

TEST(SauteReward, SingleViolatingStepPaysMinusN) {
  const auto r = saute_reward(make({0.4, 0.1}, {0.4, 0.1}, 1.0), {});
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], -20.0);
}

TEST(SauteReward, AgreesWithUnaugmentedWhileFeasible) {
  const Trajectory t = make({0.1, 0.1, 0.1}, {0.1, 0.1, 0.1}, 1.0);
  EXPECT_EQ(saute_reward(t, {}), unaug_reward(t, {}));
  EXPECT_EQ(saute_reward(t, {}), (std::vector<double>{0, 0, 1}));
}

TEST(SauteReward, TrackedBudgetTelescopes) {
  Rng rng(1);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> c(6);
    for (double& x : c) x = 0.2 * rng.uniform();
    double z = 0.35, spent = 0.0;
    for (double x : c) {
      z = z - x;
      spent += x;
      EXPECT_NEAR(z, 0.35 - spent, 1e-15);
    }
    // and the shaping branch follows it
    const auto r = saute_reward(make(c, c, 1.0), {});
    double pre = 0.0;
    for (std::size_t t = 0; t < c.size(); ++t) {
      if (0.35 - pre < 0.0) {
        EXPECT_EQ(r[t], -20.0);
      }
      pre += c[t];
    }
  }
}

TEST(LagrangianReward, ZeroLambdaIsTheRawReward) {
  const Trajectory t = make({0.3, 0.7, 0.1}, {0.3, 0.7, 0.1}, 1.0);
  ConstrainedRewardSpec s = with_mode(Method::lagrangian);
  s.lambda = 0.0;
  EXPECT_EQ(lagrangian_step_reward(t, s), shape_rewards(t, with_mode(Method::reward_only)));
}

TEST(LagrangianReward, UnitLambdaNonTerminalStep) {
  ConstrainedRewardSpec s = with_mode(Method::lagrangian);
  s.lambda = 1.0;
  const auto r = lagrangian_step_reward(make({0.1, 0.0}, {0.1, 0.0}, 1.0), s);
  EXPECT_DOUBLE_EQ(r[0], -0.1);
}

TEST(LagrangianReward, GridValuesValidate) {
  for (double l : {0.001, 0.01, 0.1, 1.0, 10.0}) {
    ConstrainedRewardSpec s = with_mode(Method::lagrangian);
    s.lambda = l;
    EXPECT_NO_THROW(s.validate());
  }
}

TEST(KlRewards, NegativeCostPerStep) {
  const Trajectory t = make({0.3, 0.2}, {0.3, 0.2}, 1.0);
  for (Method m : {Method::kl_only, Method::kl_long_horizon})
    EXPECT_EQ(shape_rewards(t, with_mode(m)), (std::vector<double>{-0.3, -0.2}));
}

TEST(ShapeProperties, PenaltyOrderingIsPointwise) {
  Rng rng(2);
  for (int k = 0; k < 500; ++k) {
    std::vector<double> c(1 + rng.below(6)), p(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
      c[i] = 0.3 * rng.uniform();
      p[i] = c[i] * (0.5 + rng.uniform());
    }
    const Trajectory t = make(c, p, rng.uniform() < 0.5 ? 1.0 : 0.0);
    ConstrainedRewardSpec lo, hi;
    lo.n = 1.0 + 10 * rng.uniform();
    hi.n = lo.n + 10 * rng.uniform();
    EXPECT_LE(discounted_return(unaug_reward(t, hi), 1.0), discounted_return(unaug_reward(t, lo), 1.0));
    EXPECT_LE(discounted_return(saute_reward(t, hi), 1.0), discounted_return(saute_reward(t, lo), 1.0));
  }
}

TEST(ShapeProperties, FeasibleTrajectoriesKeepRawRewards) {
  Rng rng(3);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> c(1 + rng.below(6));
    for (double& x : c) x = 0.05 * rng.uniform();
    const Trajectory t = make(c, c, 1.0);
    const auto raw = shape_rewards(t, with_mode(Method::reward_only));
    EXPECT_EQ(unaug_reward(t, {}), raw);
    EXPECT_EQ(saute_reward(t, {}), raw);
  }
}

TEST(ShapeProperties, InfinityBudgetNeverPenalizes) {
  ConstrainedRewardSpec s;
  s.d = std::numeric_limits<double>::infinity();
  const Trajectory t = make({100, 100, 100}, {1, 1, 1}, 1.0);
  EXPECT_EQ(unaug_reward(t, s), (std::vector<double>{0, 0, 1}));
}

TEST(DiscountedReturn, Geometric) {
  EXPECT_DOUBLE_EQ(discounted_return({1, 1, 1}, 0.5), 1.75);
}

TEST(Method, NamesRoundTrip) {
  for (Method m : {Method::unaugmented, Method::saute, Method::lagrangian, Method::reward_only, Method::kl_only,
                   Method::kl_long_horizon})
    EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_THROW(parse_method("grpo"), ConfigError);
}
