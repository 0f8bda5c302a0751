#pragma once

#include <cstddef>
#include <cstdint>

#include "cdistill/policy.hpp"
#include "cdistill/reward_shaping.hpp"
#include "cdistill/rng.hpp"
#include "cdistill/rollout.hpp"
#include "cdistill/token_mdp.hpp"

namespace cdistill {

struct EvalOptions {
  /// Enumerate when the tree has at most this many leaves, else sample.
  std::size_t exact_leaf_limit = 200'000;
  std::size_t episodes = 10'000;
  RunSeed seed{0};
};

struct PolicyEvaluation {
  double task_success_rate = 0.0;
  double mean_kl = 0.0;  // expected sum of per-state costs along an episode
  double constraint_satisfaction = 0.0;
  double violation_probability = 0.0;
  bool exact = false;
};

/// Success, cost and constraint metrics of a frozen student. Violation is
/// P(sum C > d) over whole episodes (final state included), and constraint
/// satisfaction is its complement on the same evaluation set.
inline PolicyEvaluation evaluate_policy(const TokenMdp& mdp, const SoftmaxPolicy& student, const TeacherPolicy& teacher,
                                        const ConstrainedRewardSpec& spec, const EvalOptions& opt = {}) {
  check_compatible(mdp, student, teacher);
  const StateCosts costs = StateCosts::compute(student, teacher, spec);
  PolicyEvaluation e;
  if (count_leaves(mdp, opt.exact_leaf_limit) <= opt.exact_leaf_limit) {
    e.exact = true;
    for_each_trajectory(mdp, costs, [&](const Trajectory& t, double p) {
      const double c = t.total_cost();
      e.task_success_rate += p * t.task_return();
      e.mean_kl += p * c;
      if (c > spec.d) e.violation_probability += p;
    });
  } else {
    std::size_t violations = 0;
    const std::uint64_t stream = derive_stream(opt.seed, {0xE7A1});
    for (std::size_t i = 0; i < opt.episodes; ++i) {
      Rng rng(derive_stream(RunSeed{stream}, {i}));
      const StateId start = mdp.initial_states[i % mdp.initial_states.size()];
      const Trajectory t = rollout_from(mdp, costs, start, rng);
      const double c = t.total_cost();
      e.task_success_rate += t.task_return();
      e.mean_kl += c;
      if (c > spec.d) ++violations;
    }
    const double n = static_cast<double>(opt.episodes);
    e.task_success_rate /= n;
    e.mean_kl /= n;
    e.violation_probability = static_cast<double>(violations) / n;
  }
  e.constraint_satisfaction = 1.0 - e.violation_probability;
  return e;
}

}  // namespace cdistill
